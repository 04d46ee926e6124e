#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lcmfuse/container.hpp"
#include "lcmfuse/nn_ops.hpp"
#include "lcmfuse/weight_algebra.hpp"

namespace lcmfuse::net {

// Toy conv encoder-decoder denoiser over single-channel 16x16 frames with
// sinusoidal time embedding, discrete (shape, motion) condition embeddings,
// and optional per-position temporal self-attention over the frame axis.
struct DenoiserConfig {
    std::array<int, 3> channels{16, 32, 64};
    int time_embed_dim = 64;
    int n_shapes = 3;   // null token id == n_shapes
    int n_motions = 5;  // null token id == n_motions
    bool temporal_enabled = false;
    int lora_rank = 4;
    int frames = 8;  // frame count in video mode
    int max_timestep = 1000;
    int image_size = 16;

    int shape_null() const { return n_shapes; }
    int motion_null() const { return n_motions; }
    void validate() const;
};

struct ParamTensor {
    std::vector<int64_t> shape;
    std::vector<double> value;
    std::vector<double> grad;

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        return n;
    }
};

class ParamStore {
public:
    ParamTensor& add(const std::string& name, std::vector<int64_t> shape);
    ParamTensor& at(const std::string& name);
    const ParamTensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return tensors_.count(name) != 0; }
    void zero_grads();
    std::vector<std::string> names() const;
    int64_t total_params() const;
    const std::map<std::string, ParamTensor>& tensors() const { return tensors_; }
    std::map<std::string, ParamTensor>& tensors() { return tensors_; }

private:
    std::map<std::string, ParamTensor> tensors_;
};

// One runtime-attached low-rank delta; value/grad buffers are doubles so the
// slot can be trained directly.
struct LoraSlot {
    std::string target;
    int64_t d = 0, r = 0, k = 0;
    double scale = 1.0;
    std::vector<double> A, B;    // [d,r], [r,k]
    std::vector<double> gA, gB;  // gradients
};

// family name -> target -> slot; at most one slot per (family, target)
class LoraSlots {
public:
    using FamilyMap = std::map<std::string, LoraSlot>;

    LoraSlot& attach(const std::string& family, LoraSlot slot);
    bool empty() const { return families_.empty(); }
    const std::map<std::string, FamilyMap>& families() const { return families_; }
    std::map<std::string, FamilyMap>& families() { return families_; }
    FamilyMap& family(const std::string& name);
    const FamilyMap& family(const std::string& name) const;
    bool has_family(const std::string& name) const { return families_.count(name) != 0; }
    void zero_grads();

private:
    std::map<std::string, FamilyMap> families_;
};

struct LabelBatch {
    std::vector<int> t;          // per clip, in [0, max_timestep)
    std::vector<int> shape_id;   // per clip, null token allowed
    std::vector<int> motion_id;  // per clip
};

// Per-clip denoiser evaluation bookkeeping. One batched forward over B clips
// counts B evaluations; clips carrying a null condition slot count as null
// evaluations.
struct EvalCounter {
    int64_t evals = 0;
    int64_t null_evals = 0;
};

struct ForwardTrace {
    int B = 0, F = 0;
    LabelBatch labels;
    std::vector<double> x;
    std::vector<double> emb_raw, emb_pre, emb;       // [B, 64]
    std::array<std::vector<double>, 5> stage_bias;   // [B, C_stage]
    std::vector<double> a_e0, h_e0;                  // stage enc0 @16x16
    std::vector<double> p_e1, a_e1, h_e1;            // enc1 @8x8
    std::vector<double> p_e2, a_e2, h_e2;            // enc2 @4x4
    std::vector<double> u_d1, a_d1, g_d1;            // dec1 @8x8
    std::vector<double> u_d0, a_d0, g_d0;            // dec0 @16x16
    std::array<nn::AttentionTrace, 5> att;
    // conv kernels / attention projections with LoRA folded in; empty when no
    // slot targets the tensor (base weights used directly)
    std::map<std::string, std::vector<double>> effective;
};

class DenoiserNet {
public:
    explicit DenoiserNet(DenoiserConfig cfg);

    const DenoiserConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    int64_t parameter_count() const { return params_.total_params(); }

    weights::TensorContainer to_container(std::map<std::string, std::string> metadata = {}) const;
    // requires an exact name/shape match with this net's parameter set
    void load_full(const weights::TensorContainer& c);
    // copies the named subset (prefix "spatial." + "embed." or "temporal.");
    // every parameter under the prefix must be present in c
    void load_prefixed(const weights::TensorContainer& c, const std::vector<std::string>& prefixes);

private:
    DenoiserConfig cfg_;
    ParamStore params_;
};

// Deterministic initialization; temporal out-projections start at zero so a
// freshly inserted motion module is an exact no-op.
DenoiserNet build_denoiser(const DenoiserConfig& cfg, uint64_t seed);

// Copies spatial/embed weights bit-exact into a temporal-enabled clone and
// adds freshly initialized temporal blocks. Errors if already temporal.
DenoiserNet insert_temporal(const DenoiserNet& image_net, uint64_t seed);

// eps = denoiser(x, t, c); x and eps are [B, F, 1, S, S]. lora may be null.
// counter, when given, is bumped by B evaluations (plus null bookkeeping).
void forward(const DenoiserNet& net, const LoraSlots* lora, const double* x, int B, int F,
             const LabelBatch& labels, double* eps, ForwardTrace& trace, EvalCounter* counter = nullptr);

// Accumulates parameter gradients into net.params() (and slot gA/gB) given
// the loss gradient w.r.t. eps.
void backward(DenoiserNet& net, LoraSlots* lora, const ForwardTrace& trace, const double* d_eps);

enum class Selector { All, LoraOnly, TemporalOnly, SpatialFull };

Selector selector_from_string(const std::string& s);
std::string selector_to_string(Selector s);

struct ParamView {
    std::string name;
    double* value;
    double* grad;
    int64_t len;
};

// The exact parameters a training stage may update; everything else stays
// frozen. lora_family names the trainable family for LoraOnly/All.
std::vector<ParamView> trainable_subset(DenoiserNet& net, LoraSlots* lora, const std::string& lora_family,
                                        Selector sel);

struct LoraTargetSpec {
    std::string name;
    int64_t d;
    int64_t k;
};

// Conv kernels plus (when temporal) attention projection matrices.
std::vector<LoraTargetSpec> lora_targets(const DenoiserNet& net);

// Fresh family with A ~ N(0, 0.2), B = 0 (zero delta at attach time); rank is
// clamped to min(d, k) per target.
void attach_lora_family(const DenoiserNet& net, LoraSlots& slots, const std::string& family, int rank,
                        uint64_t seed, bool spatial_only = false);

// LoraSlots <-> container-level LoraDelta lists (f32 boundary)
std::vector<weights::LoraDelta> family_to_deltas(const LoraSlots& slots, const std::string& family);
void attach_deltas(LoraSlots& slots, const std::string& family, const std::vector<weights::LoraDelta>& deltas);

}  // namespace lcmfuse::net
