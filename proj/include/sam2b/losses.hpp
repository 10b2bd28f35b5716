#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "sam2b/core.hpp"
#include "sam2b/tensor.hpp"

namespace sam2b {

/// Contrastive alignment is undefined without in-batch negatives.
struct InsufficientBatchError : Error {
    using Error::Error;
};

struct LossConfig {
    double beta = 0.5;   // alignment trade-off, >= 0
    double theta = 0.1;  // contrastive temperature, > 0

    void validate() const {
        if (beta < 0.0) throw ConfigError("loss: beta must be >= 0");
        if (theta <= 0.0) throw ConfigError("loss: theta must be > 0");
    }
};

/// Mean cross-entropy between beam logits and the oracle labels.
inline ad::Var task_loss(ad::Tape& tape, ad::Var logits, std::span<const std::size_t> labels) {
    return tape.log_softmax_cross_entropy(logits, labels);
}

/// Symmetric in-batch contrastive alignment over ordered modality pairs.
///
/// For each ordered pair (g1, g2) the temperature-scaled score matrix
/// (X_g1 X_g2^T) / theta is scored row-wise against the matching time index:
/// the positive for sample i is modality g2's embedding of sample i, the
/// negatives are the other B-1 samples. Averaged over rows and all
/// |A| (|A|-1) ordered pairs.
inline ad::Var alignment_loss(ad::Tape& tape, std::span<const ad::Var> normalized_embeddings,
                              double theta) {
    if (theta <= 0.0) throw ConfigError("alignment: theta must be > 0");
    const std::size_t a = normalized_embeddings.size();
    if (a == 0) throw DimensionError("alignment: no modalities");
    const std::size_t b = tape.shape(normalized_embeddings[0])[0];
    if (b < 2)
        throw InsufficientBatchError("alignment loss needs a batch of >= 2, got " +
                                     std::to_string(b));
    std::vector<std::size_t> diagonal(b);
    std::iota(diagonal.begin(), diagonal.end(), 0);

    std::vector<ad::Var> pair_losses;
    for (std::size_t g1 = 0; g1 < a; ++g1)
        for (std::size_t g2 = 0; g2 < a; ++g2) {
            if (g1 == g2) continue;
            ad::Var scores = tape.scale(
                tape.matmul(normalized_embeddings[g1], tape.transpose(normalized_embeddings[g2])),
                1.0 / theta);
            pair_losses.push_back(tape.log_softmax_cross_entropy(scores, diagonal));
        }
    ad::Var total = pair_losses[0];
    for (std::size_t i = 1; i < pair_losses.size(); ++i) total = tape.add(total, pair_losses[i]);
    return tape.scale(total, 1.0 / static_cast<double>(a * (a - 1)));
}

/// L = L1 + beta * L2. With beta == 0 the task loss node is returned as-is,
/// so the two are bit-identical.
inline ad::Var total_loss(ad::Tape& tape, ad::Var task, ad::Var align, const LossConfig& cfg) {
    cfg.validate();
    if (cfg.beta == 0.0) return task;
    return tape.add(task, tape.scale(align, cfg.beta));
}

}  // namespace sam2b
