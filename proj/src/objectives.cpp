#include "defend/objectives.hpp"

#include <cmath>

namespace defend {

namespace {

// mean over rows of ( lse(S_i / tau) - S_ii / tau )
Tensor info_nce(const Tensor& sims, double tau) {
    Tensor scaled = scale(sims, 1.0 / tau);
    Tensor lse = lse_rows(scaled);
    Tensor matched = diag(scaled);
    return mean_all(sub(lse, matched));
}

}  // namespace

Tensor contrastive_loss(const Tensor& text_vecs, const Tensor& global_vecs, double tau,
                        bool symmetric) {
    if (tau <= 0.0) throw ContractError("contrastive_loss: tau must be positive");
    if (!text_vecs.defined() || text_vecs.rows() < 1)
        throw ContractError("contrastive_loss: empty batch");
    if (text_vecs.rows() != global_vecs.rows() || text_vecs.cols() != global_vecs.cols())
        throw ShapeError("contrastive_loss: text/global shape mismatch");

    Tensor t_norm = row_l2_normalize(text_vecs);
    Tensor g_norm = row_l2_normalize(global_vecs);
    Tensor sims = matmul(t_norm, transpose(g_norm));  // sims(i,k) = s(text_i, global_k)

    Tensor loss = info_nce(sims, tau);
    if (symmetric) loss = scale(add(loss, info_nce(transpose(sims), tau)), 0.5);
    return loss;
}

Tensor patch_coherence_loss(const Tensor& f_gs, const Tensor& f_ps) {
    if (!f_gs.defined() || f_gs.rows() != 1)
        throw ShapeError("patch_coherence_loss: global feature must be 1xD");
    if (!f_ps.defined() || f_ps.rows() < 1)
        throw ContractError("patch_coherence_loss: need at least one patch row");
    if (f_ps.cols() != f_gs.cols())
        throw ShapeError("patch_coherence_loss: dimension mismatch");
    Tensor delta = sub(f_gs, mean_rows(f_ps));
    return sum_all(mul(delta, delta));
}

Tensor description_loss(const std::vector<Tensor>& logits,
                        const std::vector<std::vector<int>>& targets, int pad_id) {
    if (logits.empty() || logits.size() != targets.size())
        throw ContractError("description_loss: logits/targets batch mismatch");

    std::vector<Tensor> per_sequence;
    per_sequence.reserve(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const Tensor& l = logits[i];
        const auto& t = targets[i];
        if (static_cast<int>(t.size()) != l.rows())
            throw ContractError("description_loss: sequence " + std::to_string(i) +
                                " has " + std::to_string(t.size()) + " targets for " +
                                std::to_string(l.rows()) + " logit rows");
        std::vector<int> rows, cols;
        for (std::size_t j = 0; j < t.size(); ++j) {
            if (t[j] == pad_id) continue;
            if (t[j] < 0 || t[j] >= l.cols())
                throw ContractError("description_loss: target id " + std::to_string(t[j]) +
                                    " outside vocabulary of size " +
                                    std::to_string(l.cols()));
            rows.push_back(static_cast<int>(j));
            cols.push_back(t[j]);
        }
        if (rows.empty()) {
            per_sequence.push_back(Tensor::scalar(0.0));
            continue;
        }
        Tensor scored = l;
        if (static_cast<int>(rows.size()) != l.rows()) {
            std::vector<Tensor> kept;
            for (int r : rows) kept.push_back(slice_rows(l, r, 1));
            scored = concat_rows(kept);
        }
        Tensor log_probs = rows_select_cols(log_softmax_rows(scored), cols);
        per_sequence.push_back(scale(sum_all(log_probs), -1.0));
    }
    Tensor stacked = per_sequence.size() == 1 ? per_sequence[0] : concat_rows(per_sequence);
    return mean_all(stacked);
}

LossReport combine(double cont, double pc, double desc, const LossWeights& weights,
                   int batch_size) {
    weights.validate();
    if (!std::isfinite(cont))
        throw NumericError("combine: contrastive term is not finite");
    if (!std::isfinite(pc))
        throw NumericError("combine: patch coherence term is not finite");
    if (!std::isfinite(desc))
        throw NumericError("combine: description term is not finite");
    LossReport r;
    r.cont = cont;
    r.pc = pc;
    r.desc = desc;
    r.total = weights.cont * cont + weights.pc * pc + weights.desc * desc;
    r.batch_size = batch_size;
    if (!std::isfinite(r.total)) throw NumericError("combine: total loss is not finite");
    return r;
}

}  // namespace defend
