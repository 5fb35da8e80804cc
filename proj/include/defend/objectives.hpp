#pragma once

#include <vector>

#include "defend/tensor.hpp"

namespace defend {

struct LossWeights {
    double cont = 1.0;
    double pc = 1.0;
    double desc = 1.0;

    void validate() const {
        if (cont < 0.0 || pc < 0.0 || desc < 0.0)
            throw ConfigError("loss weights must be non-negative");
        if (cont == 0.0 && pc == 0.0 && desc == 0.0)
            throw ConfigError("at least one loss weight must be positive");
    }
};

struct LossReport {
    double cont = 0.0;
    double pc = 0.0;
    double desc = 0.0;
    double total = 0.0;
    int batch_size = 0;
};

// Temperature-scaled softmax cross-entropy pairing text row i with global
// row i against in-batch negatives (text -> image direction; the symmetric
// flag averages in the reverse direction).
Tensor contrastive_loss(const Tensor& text_vecs, const Tensor& global_vecs, double tau,
                        bool symmetric = false);

// || f_G* - AvgPool(f_P*) ||^2
Tensor patch_coherence_loss(const Tensor& f_gs, const Tensor& f_ps);

// Teacher-forced NLL: per sequence, sum over positions whose target is not
// pad_id of -log softmax(logits)[target]; mean over the batch. logits[i]
// row j must be the distribution for targets[i][j].
Tensor description_loss(const std::vector<Tensor>& logits,
                        const std::vector<std::vector<int>>& targets, int pad_id);

// Weighted combination; throws NumericError naming any non-finite term.
LossReport combine(double cont, double pc, double desc, const LossWeights& weights,
                   int batch_size);

}  // namespace defend
