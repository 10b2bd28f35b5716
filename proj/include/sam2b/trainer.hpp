#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sam2b/dataset.hpp"
#include "sam2b/model.hpp"

namespace sam2b {

// ---------------------------------------------------------------------------
// Split and metrics
// ---------------------------------------------------------------------------

struct Split {
    std::span<const Sample> train;
    std::span<const Sample> test;
};

/// Chronological split at floor(N * fraction); both parts must be nonempty.
inline Split split_dataset(const Dataset& ds, double fraction) {
    if (ds.samples.empty()) throw ConfigError("split: dataset is empty");
    if (fraction <= 0.0 || fraction >= 1.0) throw ConfigError("split: fraction must be in (0, 1)");
    const auto cut = static_cast<std::size_t>(static_cast<double>(ds.samples.size()) * fraction);
    if (cut == 0 || cut == ds.samples.size())
        throw ConfigError("split: both parts must be nonempty (N=" +
                          std::to_string(ds.samples.size()) + ", fraction=" +
                          std::to_string(fraction) + ")");
    return {std::span(ds.samples).first(cut), std::span(ds.samples).subspan(cut)};
}

/// True when the sample's label is among the k highest logits. Partial
/// selection with the deterministic (value desc, index asc) tie rule.
inline bool label_in_top_k(std::span<const double> logits, std::size_t label, std::size_t k) {
    k = std::min(k, logits.size());
    std::vector<std::size_t> idx(logits.size());
    std::iota(idx.begin(), idx.end(), 0);
    auto better = [&](std::size_t a, std::size_t b) {
        if (logits[a] != logits[b]) return logits[a] > logits[b];
        return a < b;
    };
    std::nth_element(idx.begin(), idx.begin() + static_cast<long>(k) - 1, idx.end(), better);
    return std::any_of(idx.begin(), idx.begin() + static_cast<long>(k),
                       [&](std::size_t i) { return i == label; });
}

struct ModalityWeightReport {
    // Mean fusion weight per canonical modality slot (inactive slots stay 0),
    // reported separately for clean and degraded test samples.
    std::array<double, kModalityCount> clean_mean{};
    std::array<double, kModalityCount> degraded_mean{};
    std::size_t clean_count = 0;
    std::size_t degraded_count = 0;
};

struct Metrics {
    double top1 = 0.0, top2 = 0.0, top3 = 0.0;
    std::size_t sample_count = 0;
    ModalityWeightReport weights;
    // Top-1/2/3 restricted to the clean / degraded test subsets.
    std::array<double, 3> topk_clean{};
    std::array<double, 3> topk_degraded{};

    double top1_clean() const { return topk_clean[0]; }
    double top1_degraded() const { return topk_degraded[0]; }
};

struct EpochLog {
    std::size_t epoch = 0;
    double loss = 0.0;       // mean training loss over the epoch
    double test_top1 = 0.0;  // evaluated after the epoch
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

class AdamOptimizer {
public:
    AdamOptimizer(double lr, double beta1, double beta2, double eps)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    void set_lr(double lr) { lr_ = lr; }

    void step(std::span<ad::Tensor* const> params) {
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                m_[i].assign(params[i]->values.size(), 0.0);
                v_[i].assign(params[i]->values.size(), 0.0);
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            ad::Tensor& p = *params[i];
            if (p.grad.size() != p.values.size()) continue;  // untouched this step
            for (std::size_t j = 0; j < p.values.size(); ++j) {
                const double g = p.grad[j];
                m_[i][j] = b1_ * m_[i][j] + (1.0 - b1_) * g;
                v_[i][j] = b2_ * v_[i][j] + (1.0 - b2_) * g * g;
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                p.values[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

private:
    double lr_, b1_, b2_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class LrSchedule { kConstant, kCosine };

struct TrainConfig {
    std::size_t epochs = 60;
    std::size_t batch_size = 32;  // >= 2: the alignment loss needs negatives
    double lr = 1e-3;
    // Cosine annealing to lr_floor_factor * lr over the epochs; settles the
    // late-training oscillation of plain Adam on these small batches.
    LrSchedule lr_schedule = LrSchedule::kCosine;
    double lr_floor_factor = 0.02;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 1;
    double split_fraction = 0.7;
    LossConfig loss;
    ModelConfig model;

    void validate() const {
        if (epochs == 0) throw ConfigError("train: epochs must be >= 1");
        if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
        if (lr <= 0.0) throw ConfigError("train: lr must be positive");
        if (split_fraction <= 0.0 || split_fraction >= 1.0)
            throw ConfigError("train: split_fraction must be in (0, 1)");
        loss.validate();
        model.validate();
    }
};

inline Metrics evaluate(ModelParams& params, std::span<const Sample> test);

struct TrainResult {
    ModelParams params;
    Metrics metrics;
    std::vector<EpochLog> curve;
};

/// Adam over the combined objective with a deterministic per-epoch batch
/// order. The model's beam count and frame channels follow the dataset.
inline TrainResult train(const Dataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    const Split split = split_dataset(ds, cfg.split_fraction);

    ModelConfig mc = cfg.model;
    mc.num_beams = ds.config.channel.Q;
    mc.channels = ds.config.camera.channels;

    TrainResult result;
    result.params = init_model(mc, cfg.seed);
    result.params.encoders.stats = NormStats::fit(split.train);

    auto named = result.params.trainables();
    std::vector<ad::Tensor*> tensors;
    for (auto& [name, t] : named) tensors.push_back(t);

    AdamOptimizer adam(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

    std::vector<std::size_t> order(split.train.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.lr_schedule == LrSchedule::kCosine && cfg.epochs > 1) {
            const double progress = static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1);
            const double floor = cfg.lr * cfg.lr_floor_factor;
            adam.set_lr(floor + 0.5 * (cfg.lr - floor) * (1.0 + std::cos(M_PI * progress)));
        }
        Rng shuffle_rng(derive_seed(cfg.seed, "epoch-order", epoch));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t counted = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t bsz = std::min(cfg.batch_size, order.size() - start);
            if (bsz < 2) break;  // a single-sample remainder has no negatives
            std::vector<const Sample*> batch(bsz);
            std::vector<std::size_t> labels(bsz);
            for (std::size_t i = 0; i < bsz; ++i) {
                batch[i] = &split.train[order[start + i]];
                labels[i] = batch[i]->label;
            }

            for (ad::Tensor* t : tensors) t->zero_grad();
            ad::Tape tape;
            ModelLoss loss = model_loss(tape, result.params, batch, labels, cfg.loss);
            const double value = tape.item(loss.total);
            if (!std::isfinite(value))
                throw TrainingError("training diverged (non-finite loss) at epoch " +
                                        std::to_string(epoch),
                                    epoch);
            tape.backward(loss.total);
            adam.step(tensors);
            loss_sum += value * static_cast<double>(bsz);
            counted += bsz;
        }

        EpochLog log;
        log.epoch = epoch;
        log.loss = counted ? loss_sum / static_cast<double>(counted) : 0.0;
        log.test_top1 = evaluate(result.params, split.test).top1;
        result.curve.push_back(log);
    }

    result.metrics = evaluate(result.params, split.test);
    return result;
}

/// Top-k accuracies plus the per-modality mean weights on the clean and
/// degraded subsets (classified by the stored degradation truth).
inline Metrics evaluate(ModelParams& params, std::span<const Sample> test) {
    Metrics m;
    m.sample_count = test.size();
    if (test.empty()) return m;
    const auto active = active_modalities(params.config.variant);

    std::array<std::size_t, 3> hits{}, clean_hits{}, degraded_hits{};

    constexpr std::size_t kEvalBatch = 64;
    for (std::size_t start = 0; start < test.size(); start += kEvalBatch) {
        const std::size_t bsz = std::min(kEvalBatch, test.size() - start);
        std::vector<const Sample*> batch(bsz);
        for (std::size_t i = 0; i < bsz; ++i) batch[i] = &test[start + i];

        ad::Tape tape;
        BatchForward fwd = model_forward(tape, params, batch, /*want_diagnostics=*/true);
        const auto& logits = tape.val(fwd.logits);
        const std::size_t q = tape.shape(fwd.logits)[1];

        for (std::size_t i = 0; i < bsz; ++i) {
            const Sample& s = *batch[i];
            std::span<const double> row(logits.data() + i * q, q);
            const bool clean = s.truth.clean();
            (clean ? m.weights.clean_count : m.weights.degraded_count) += 1;
            for (std::size_t k = 0; k < 3; ++k) {
                const bool in = label_in_top_k(row, s.label, k + 1);
                hits[k] += in;
                (clean ? clean_hits : degraded_hits)[k] += in;
            }
            for (std::size_t mi = 0; mi < active.size(); ++mi) {
                const auto slot = static_cast<std::size_t>(active[mi]);
                (clean ? m.weights.clean_mean : m.weights.degraded_mean)[slot] +=
                    fwd.weights[i].w[mi];
            }
        }
    }

    const auto n = static_cast<double>(test.size());
    m.top1 = static_cast<double>(hits[0]) / n;
    m.top2 = static_cast<double>(hits[1]) / n;
    m.top3 = static_cast<double>(hits[2]) / n;
    if (m.weights.clean_count) {
        for (auto& w : m.weights.clean_mean) w /= static_cast<double>(m.weights.clean_count);
        for (std::size_t k = 0; k < 3; ++k)
            m.topk_clean[k] =
                static_cast<double>(clean_hits[k]) / static_cast<double>(m.weights.clean_count);
    }
    if (m.weights.degraded_count) {
        for (auto& w : m.weights.degraded_mean) w /= static_cast<double>(m.weights.degraded_count);
        for (std::size_t k = 0; k < 3; ++k)
            m.topk_degraded[k] = static_cast<double>(degraded_hits[k]) /
                                 static_cast<double>(m.weights.degraded_count);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'S', '2', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline KvMap stats_to_kv(const NormStats& st) {
    KvMap m;
    auto put = [&m](const std::string& key, std::span<const double> v) {
        std::string s;
        for (double x : v) {
            if (!s.empty()) s += ",";
            s += kv::fmt(x);
        }
        m[key] = s;
    };
    put("stats.gps_mean", st.gps_mean);
    put("stats.gps_std", st.gps_std);
    put("stats.hd_mean", st.hd_mean);
    put("stats.hd_std", st.hd_std);
    put("stats.pos_mean", st.pos_mean);
    put("stats.pos_std", st.pos_std);
    for (std::size_t i = 0; i < kModalityCount; ++i) {
        put(std::string("stats.cue_mean.") + kModalityNames[i], st.cue_mean[i]);
        put(std::string("stats.cue_std.") + kModalityNames[i], st.cue_std[i]);
    }
    m["stats.fitted"] = kv::fmt(st.fitted);
    return m;
}

inline NormStats stats_from_kv(kv::Reader& r) {
    NormStats st;
    auto get = [&r](const std::string& key, std::span<double> out) {
        const auto parts = kv::split(r.get_str(key, ""), ',');
        if (parts.size() != out.size())
            throw IoError("checkpoint stats field '" + key + "' has " +
                          std::to_string(parts.size()) + " entries, expected " +
                          std::to_string(out.size()));
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = kv::to_double(parts[i], key);
    };
    get("stats.gps_mean", st.gps_mean);
    get("stats.gps_std", st.gps_std);
    get("stats.hd_mean", st.hd_mean);
    get("stats.hd_std", st.hd_std);
    get("stats.pos_mean", st.pos_mean);
    get("stats.pos_std", st.pos_std);
    for (std::size_t i = 0; i < kModalityCount; ++i) {
        get(std::string("stats.cue_mean.") + kModalityNames[i], st.cue_mean[i]);
        get(std::string("stats.cue_std.") + kModalityNames[i], st.cue_std[i]);
    }
    st.fitted = r.get_bool("stats.fitted", false);
    return st;
}

}  // namespace detail

inline std::vector<unsigned char> serialize_checkpoint(ModelParams& params) {
    detail::ByteWriter payload;
    KvMap cfg = model_config_to_kv(params.config);
    for (const auto& [k, v] : detail::stats_to_kv(params.encoders.stats)) cfg[k] = v;
    const std::string cfg_text = kv::dump(cfg);
    payload.u32(static_cast<std::uint32_t>(cfg_text.size()));
    payload.raw(cfg_text);

    auto named = params.trainables();
    payload.u32(static_cast<std::uint32_t>(named.size()));
    for (auto& [name, t] : named) {
        payload.u32(static_cast<std::uint32_t>(name.size()));
        payload.raw(name);
        payload.u32(static_cast<std::uint32_t>(t->shape.size()));
        for (std::size_t d : t->shape) payload.u64(d);
        for (double v : t->values) payload.f64(v);
    }

    detail::ByteWriter w;
    w.raw(std::string(kCheckpointMagic, 4));
    w.u32(kCheckpointVersion);
    w.u32(crc32(payload.bytes));
    w.bytes.insert(w.bytes.end(), payload.bytes.begin(), payload.bytes.end());
    return w.bytes;
}

inline ModelParams deserialize_checkpoint(const std::vector<unsigned char>& bytes) {
    detail::ByteReader r{bytes.data(), bytes.size()};
    if (r.raw(4) != std::string(kCheckpointMagic, 4))
        throw IoError("not a checkpoint file (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw VersionError("checkpoint version " + std::to_string(version) +
                           " not supported (expected " + std::to_string(kCheckpointVersion) + ")");
    const std::uint32_t stored_crc = r.u32();
    if (crc32(bytes.data() + r.pos, bytes.size() - r.pos) != stored_crc)
        throw ChecksumError("checkpoint payload CRC mismatch (corrupted file)");

    const std::uint32_t cfg_len = r.u32();
    kv::Reader cfg_reader(kv::parse(r.raw(cfg_len)));
    const ModelConfig mc = model_config_from_kv(cfg_reader);
    NormStats stats = detail::stats_from_kv(cfg_reader);
    cfg_reader.reject_unknown();

    ModelParams params = init_model(mc, 0);
    params.encoders.stats = stats;
    auto named = params.trainables();
    const std::uint32_t count = r.u32();
    if (count != named.size())
        throw IoError("checkpoint has " + std::to_string(count) + " tensors, expected " +
                      std::to_string(named.size()));
    for (auto& [name, t] : named) {
        const std::uint32_t name_len = r.u32();
        const std::string stored_name = r.raw(name_len);
        if (stored_name != name)
            throw IoError("checkpoint tensor '" + stored_name + "' does not match expected '" +
                          name + "'");
        const std::uint32_t rank = r.u32();
        ad::Shape shape(rank);
        for (auto& d : shape) d = r.u64();
        if (shape != t->shape)
            throw IoError("checkpoint tensor '" + name + "' has shape " + ad::shape_str(shape) +
                          ", expected " + ad::shape_str(t->shape));
        for (double& v : t->values) v = r.f64();
    }
    if (r.pos != bytes.size())
        throw IoError("checkpoint has " + std::to_string(bytes.size() - r.pos) +
                      " trailing bytes");
    return params;
}

/// Optional expected_variant guards against loading a checkpoint into a
/// different experiment arm.
inline ModelParams load_checkpoint(const std::filesystem::path& path,
                                   std::optional<Variant> expected_variant = std::nullopt) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw IoError("cannot open '" + path.string() + "'");
    std::vector<unsigned char> bytes(static_cast<std::size_t>(f.tellg()));
    f.seekg(0);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short read from '" + path.string() + "'");
    ModelParams params = deserialize_checkpoint(bytes);
    if (expected_variant && params.config.variant != *expected_variant)
        throw ConfigError(std::string("checkpoint holds variant '") +
                          variant_name(params.config.variant) + "', expected '" +
                          variant_name(*expected_variant) + "'");
    return params;
}

inline void save_checkpoint(ModelParams& params, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(params);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to '" + path.string() + "'");
}

}  // namespace sam2b
