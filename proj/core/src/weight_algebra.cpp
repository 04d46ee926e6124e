#include "lcmfuse/weight_algebra.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

namespace lcmfuse::weights {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void validate_lora(const LoraDelta& delta) {
    if (delta.A.shape.size() != 2 || delta.B.shape.size() != 2) {
        throw Error("lora '" + delta.target + "': A and B must be matrices");
    }
    const int64_t d = delta.A.shape[0];
    const int64_t rA = delta.A.shape[1];
    const int64_t rB = delta.B.shape[0];
    const int64_t k = delta.B.shape[1];
    if (rA != rB) {
        throw Error("lora '" + delta.target + "': A is d x " + std::to_string(rA) + " but B is " +
                    std::to_string(rB) + " x k");
    }
    if (rA < 1) {
        throw Error("lora '" + delta.target + "': rank must be at least 1");
    }
    if (rA > std::min(d, k)) {
        throw Error("lora '" + delta.target + "': rank " + std::to_string(rA) + " exceeds min(d, k) = " +
                    std::to_string(std::min(d, k)));
    }
    validate_tensor(delta.target + ".lora_A", delta.A);
    validate_tensor(delta.target + ".lora_B", delta.B);
}

bool lora_rank_oversized(const LoraDelta& delta) {
    return 2 * delta.r() > std::min(delta.d(), delta.k());
}

Tensor lora_expand(const LoraDelta& delta) {
    validate_lora(delta);
    const int64_t d = delta.d(), r = delta.r(), k = delta.k();
    Tensor out;
    out.shape = {d, k};
    out.data.assign(static_cast<size_t>(d * k), 0.0f);
    for (int64_t i = 0; i < d; ++i) {
        for (int64_t j = 0; j < k; ++j) {
            double acc = 0.0;
            for (int64_t q = 0; q < r; ++q) {
                acc += static_cast<double>(delta.A.data[static_cast<size_t>(i * r + q)]) *
                       static_cast<double>(delta.B.data[static_cast<size_t>(q * k + j)]);
            }
            out.data[static_cast<size_t>(i * k + j)] = static_cast<float>(delta.scale * acc);
        }
    }
    return out;
}

Tensor lora_expand(const LoraDelta& delta, const std::vector<int64_t>& target_shape) {
    Tensor flat = lora_expand(delta);
    int64_t numel = 1;
    for (int64_t dim : target_shape) numel *= dim;
    if (numel != flat.numel() || target_shape.empty() || target_shape[0] != delta.d()) {
        std::ostringstream os;
        os << "lora '" << delta.target << "': expanded shape [" << delta.d() << ", " << delta.k()
           << "] does not flatten-match the target shape";
        throw Error(os.str());
    }
    flat.shape = target_shape;
    return flat;
}

TensorContainer extract_residual(const TensorContainer& trained, const TensorContainer& base) {
    std::vector<std::string> only_trained, only_base, shape_mismatch;
    for (const auto& [name, t] : trained.entries) {
        auto it = base.entries.find(name);
        if (it == base.entries.end()) {
            only_trained.push_back(name);
        } else if (it->second.shape != t.shape) {
            shape_mismatch.push_back(name);
        }
    }
    for (const auto& [name, t] : base.entries) {
        if (!trained.entries.count(name)) only_base.push_back(name);
    }
    if (!only_trained.empty() || !only_base.empty() || !shape_mismatch.empty()) {
        std::ostringstream os;
        os << "residual extraction requires identical name sets and shapes;";
        if (!only_trained.empty()) {
            os << " only in trained:";
            for (const auto& n : only_trained) os << " '" << n << "'";
            os << ";";
        }
        if (!only_base.empty()) {
            os << " only in base:";
            for (const auto& n : only_base) os << " '" << n << "'";
            os << ";";
        }
        if (!shape_mismatch.empty()) {
            os << " shape mismatch:";
            for (const auto& n : shape_mismatch) os << " '" << n << "'";
        }
        throw Error(os.str());
    }

    TensorContainer out;
    out.metadata["kind"] = "residual";
    for (const auto& [name, t] : trained.entries) {
        const Tensor& b = base.entries.at(name);
        Tensor diff;
        diff.shape = t.shape;
        diff.data.resize(t.data.size());
        for (size_t i = 0; i < t.data.size(); ++i) {
            diff.data[i] = static_cast<float>(static_cast<double>(t.data[i]) - static_cast<double>(b.data[i]));
        }
        out.entries.emplace(name, std::move(diff));
    }
    return out;
}

namespace {

void check_lora_family(const TensorContainer& base, const std::vector<LoraDelta>& family,
                       const std::string& family_name, std::vector<std::string>& matched,
                       CompatReport& report) {
    for (const auto& delta : family) {
        auto it = base.entries.find(delta.target);
        if (it == base.entries.end()) {
            report.ok = false;
            report.findings.push_back(
                {family_name, delta.target, "target '" + delta.target + "' not present in base"});
            continue;
        }
        const Tensor& w = it->second;
        if (w.shape.empty() || w.shape[0] != delta.d() || w.numel() != delta.d() * delta.k()) {
            report.ok = false;
            report.findings.push_back({family_name, delta.target,
                                       "delta [" + std::to_string(delta.d()) + " x " +
                                           std::to_string(delta.k()) + "] does not match target of " +
                                           std::to_string(w.numel()) + " elements"});
            continue;
        }
        matched.push_back(delta.target);
    }
}

}  // namespace

CompatReport validate_compat(const TensorContainer& base, const ResidualSet& residuals) {
    CompatReport report;
    check_lora_family(base, residuals.personalized, "personalized", report.matched_personalized, report);
    check_lora_family(base, residuals.image_accel, "image_accel", report.matched_image, report);
    for (const auto& [name, t] : residuals.video_accel.entries) {
        if (base.entries.count(name)) {
            report.ok = false;
            report.findings.push_back(
                {"video_accel", name, "temporal name '" + name + "' collides with a base weight"});
        } else {
            report.matched_video.push_back(name);
        }
    }
    return report;
}

std::string CompatReport::summary() const {
    std::ostringstream os;
    os << (ok ? "compatible" : "INCOMPATIBLE") << ": personalized=" << matched_personalized.size()
       << " image=" << matched_image.size() << " temporal=" << matched_video.size();
    for (const auto& f : findings) {
        os << "\n  [" << f.family << "] " << f.message;
    }
    return os.str();
}

TensorContainer combine_weights(const TensorContainer& base, const ResidualSet& residuals, double alpha,
                                double beta, double gamma,
                                const std::map<std::string, std::string>& extra_metadata) {
    CompatReport report = validate_compat(base, residuals);
    if (!report.ok) {
        throw Error("combine_weights: " + report.summary());
    }
    if (gamma != 0.0 && residuals.video_accel.entries.empty()) {
        throw Error("combine_weights: no motion weights (gamma != 0 with empty video residual)");
    }

    TensorContainer out;
    out.entries = base.entries;

    // Accumulate dense deltas in double per touched target, then round once.
    std::map<std::string, std::vector<double>> accum;
    auto fetch = [&](const std::string& target) -> std::vector<double>& {
        auto it = accum.find(target);
        if (it == accum.end()) {
            const Tensor& b = base.entries.at(target);
            std::vector<double> v(b.data.begin(), b.data.end());
            it = accum.emplace(target, std::move(v)).first;
        }
        return it->second;
    };
    auto apply_family = [&](const std::vector<LoraDelta>& family, double factor) {
        if (factor == 0.0) return;
        for (const auto& delta : family) {
            Tensor dense = lora_expand(delta);
            std::vector<double>& acc = fetch(delta.target);
            for (size_t i = 0; i < acc.size(); ++i) {
                acc[i] += factor * static_cast<double>(dense.data[i]);
            }
        }
    };
    apply_family(residuals.personalized, alpha);
    apply_family(residuals.image_accel, beta);
    for (const auto& [target, acc] : accum) {
        Tensor& w = out.entries.at(target);
        for (size_t i = 0; i < acc.size(); ++i) w.data[i] = static_cast<float>(acc[i]);
    }

    if (gamma != 0.0) {
        for (const auto& [name, t] : residuals.video_accel.entries) {
            Tensor scaled;
            scaled.shape = t.shape;
            scaled.data.resize(t.data.size());
            for (size_t i = 0; i < t.data.size(); ++i) {
                scaled.data[i] = static_cast<float>(gamma * static_cast<double>(t.data[i]));
            }
            out.entries.emplace(name, std::move(scaled));
        }
    }

    out.metadata = base.metadata;
    out.metadata["kind"] = "base";
    out.metadata["stage"] = "merged";
    out.metadata["merge.alpha"] = format_double(alpha);
    out.metadata["merge.beta"] = format_double(beta);
    out.metadata["merge.gamma"] = format_double(gamma);
    out.metadata["merge.base_digest"] = container_digest(base);
    out.metadata["merge.personalized_digest"] =
        container_digest(lora_list_to_container(residuals.personalized, {{"kind", "lora"}}));
    out.metadata["merge.image_digest"] =
        container_digest(lora_list_to_container(residuals.image_accel, {{"kind", "lora"}}));
    out.metadata["merge.video_digest"] = container_digest(residuals.video_accel);
    // Guidance was baked in during distillation; samplers refuse CFG on
    // checkpoints carrying this marker.
    out.metadata["guidance"] = "none";
    for (const auto& [k, v] : extra_metadata) out.metadata[k] = v;
    return out;
}

TensorContainer lora_list_to_container(const std::vector<LoraDelta>& deltas,
                                       std::map<std::string, std::string> metadata) {
    TensorContainer c;
    c.metadata = std::move(metadata);
    for (const auto& delta : deltas) {
        validate_lora(delta);
        c.entries.emplace(delta.target + ".lora_A", delta.A);
        c.entries.emplace(delta.target + ".lora_B", delta.B);
        c.metadata["lora.scale." + delta.target] = format_double(delta.scale);
    }
    return c;
}

std::vector<LoraDelta> lora_list_from_container(const TensorContainer& c) {
    std::vector<LoraDelta> out;
    const std::string suffix_a = ".lora_A";
    for (const auto& [name, t] : c.entries) {
        if (name.size() <= suffix_a.size() ||
            name.compare(name.size() - suffix_a.size(), suffix_a.size(), suffix_a) != 0) {
            continue;
        }
        std::string target = name.substr(0, name.size() - suffix_a.size());
        auto itB = c.entries.find(target + ".lora_B");
        if (itB == c.entries.end()) {
            throw Error("lora container: '" + name + "' has no matching lora_B");
        }
        LoraDelta delta;
        delta.target = target;
        delta.A = t;
        delta.B = itB->second;
        auto itScale = c.metadata.find("lora.scale." + target);
        delta.scale = itScale == c.metadata.end() ? 1.0 : std::stod(itScale->second);
        validate_lora(delta);
        out.push_back(std::move(delta));
    }
    return out;
}

}  // namespace lcmfuse::weights
