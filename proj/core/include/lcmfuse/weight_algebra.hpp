#pragma once

#include <string>
#include <vector>

#include "lcmfuse/container.hpp"

namespace lcmfuse::weights {

// Low-rank weight residual targeting a named base weight. Conv kernels
// [out, in, kh, kw] flatten to d = out, k = in*kh*kw so the same d x k
// algebra covers every target.
struct LoraDelta {
    std::string target;
    Tensor A;  // [d, r]
    Tensor B;  // [r, k]
    double scale = 1.0;

    int64_t d() const { return A.shape.empty() ? 0 : A.shape[0]; }
    int64_t r() const { return A.shape.size() < 2 ? 0 : A.shape[1]; }
    int64_t k() const { return B.shape.size() < 2 ? 0 : B.shape[1]; }
};

// Throws on rank/shape violations (r < 1 or r > min(d, k), A/B mismatch).
void validate_lora(const LoraDelta& delta);

// True when r exceeds min(d, k)/2; callers log a warning in that case.
bool lora_rank_oversized(const LoraDelta& delta);

// scale * (A x B) as a dense [d, k] tensor, or reshaped to target_shape when
// given (element count must match and target_shape[0] must equal d).
Tensor lora_expand(const LoraDelta& delta);
Tensor lora_expand(const LoraDelta& delta, const std::vector<int64_t>& target_shape);

// The three residual families: two LoRA sets over shared spatial weights and
// a container of temporal-module weights disjoint from the base names.
struct ResidualSet {
    std::vector<LoraDelta> personalized;
    std::vector<LoraDelta> image_accel;
    TensorContainer video_accel;

    bool empty() const {
        return personalized.empty() && image_accel.empty() && video_accel.entries.empty();
    }
};

// trained - base, entrywise. Name sets and shapes must match exactly; the
// error message lists the symmetric difference.
TensorContainer extract_residual(const TensorContainer& trained, const TensorContainer& base);

struct CompatFinding {
    std::string family;
    std::string target;
    std::string message;
};

struct CompatReport {
    bool ok = true;
    std::vector<std::string> matched_personalized;
    std::vector<std::string> matched_image;
    std::vector<std::string> matched_video;
    std::vector<CompatFinding> findings;

    std::string summary() const;
};

// Diagnostic only: never throws.
CompatReport validate_compat(const TensorContainer& base, const ResidualSet& residuals);

// w' = base + alpha * dense(personalized) + beta * dense(image_accel) on the
// shared names, plus gamma-scaled temporal entries when gamma != 0. A family
// with a zero factor is skipped entirely so the zero-factor result stays
// bit-identical to base. Output metadata records the factors and the input
// digests; extra_metadata entries are merged in on top.
TensorContainer combine_weights(const TensorContainer& base, const ResidualSet& residuals, double alpha,
                                double beta, double gamma,
                                const std::map<std::string, std::string>& extra_metadata = {});

// LoRA list <-> container round trip. Tensors are stored as
// "<target>.lora_A" / "<target>.lora_B"; per-target scales live in metadata
// under "lora.scale.<target>".
TensorContainer lora_list_to_container(const std::vector<LoraDelta>& deltas,
                                       std::map<std::string, std::string> metadata);
std::vector<LoraDelta> lora_list_from_container(const TensorContainer& c);

std::string format_double(double v);

}  // namespace lcmfuse::weights
