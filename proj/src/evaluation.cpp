#include "defend/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "defend/fem.hpp"
#include "defend/text.hpp"
#include "defend/trainer.hpp"

namespace defend {

Json MetricReport::to_json() const {
    Json j;
    j["acc_top1"] = acc_top1;
    j["acc_top5"] = acc_top5;
    j["precision"] = precision;
    j["recall"] = recall;
    j["f1"] = f1;
    Json per = Json::array();
    for (const auto& c : per_class) {
        Json row;
        row["class"] = c.name;
        row["support"] = c.support;
        row["precision"] = c.precision;
        row["recall"] = c.recall;
        per.push_back(row);
    }
    j["per_class"] = per;
    return j;
}

double topk_accuracy(const Tensor& scores, const std::vector<int>& labels, int k) {
    if (static_cast<int>(labels.size()) != scores.rows())
        throw ContractError("topk_accuracy: one label per row required");
    if (k < 1 || k > scores.cols())
        throw ContractError("topk_accuracy: k must be in [1, C]");
    int hits = 0;
    std::vector<int> order(scores.cols());
    for (int i = 0; i < scores.rows(); ++i) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            if (scores.at(i, a) != scores.at(i, b)) return scores.at(i, a) > scores.at(i, b);
            return a < b;
        });
        for (int j = 0; j < k; ++j)
            if (order[j] == labels[i]) {
                ++hits;
                break;
            }
    }
    return static_cast<double>(hits) / scores.rows();
}

MetricReport classification_report(const Tensor& scores, const std::vector<int>& labels,
                                   const std::vector<std::string>& class_names) {
    const int n_classes = static_cast<int>(class_names.size());
    if (scores.cols() != n_classes)
        throw ContractError("classification_report: score columns != class count");

    MetricReport report;
    report.acc_top1 = topk_accuracy(scores, labels, 1);
    report.acc_top5 = topk_accuracy(scores, labels, std::min(5, n_classes));

    std::vector<int> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0),
        support(n_classes, 0);
    for (int i = 0; i < scores.rows(); ++i) {
        int pred = 0;
        for (int c = 1; c < n_classes; ++c)
            if (scores.at(i, c) > scores.at(i, pred)) pred = c;
        const int truth = labels[i];
        ++support[truth];
        if (pred == truth) {
            ++tp[truth];
        } else {
            ++fp[pred];
            ++fn[truth];
        }
    }

    double macro_p = 0.0, macro_r = 0.0;
    for (int c = 0; c < n_classes; ++c) {
        const double p = tp[c] + fp[c] > 0 ? static_cast<double>(tp[c]) / (tp[c] + fp[c]) : 0.0;
        const double r = tp[c] + fn[c] > 0 ? static_cast<double>(tp[c]) / (tp[c] + fn[c]) : 0.0;
        macro_p += p;
        macro_r += r;
        report.per_class.push_back({class_names[c], support[c], p, r});
    }
    macro_p /= n_classes;
    macro_r /= n_classes;
    report.precision = macro_p;
    report.recall = macro_r;
    report.f1 = macro_p + macro_r > 0.0 ? 2.0 * macro_p * macro_r / (macro_p + macro_r) : 0.0;
    return report;
}

double binomial_p_value(int k, int n, double p) {
    if (k <= 0) return 1.0;
    if (k > n) return 0.0;
    double total = 0.0;
    for (int i = k; i <= n; ++i) {
        const double log_c = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) -
                             std::lgamma(n - i + 1.0);
        total += std::exp(log_c + i * std::log(p) + (n - i) * std::log1p(-p));
    }
    return std::min(1.0, total);
}

TeacherContext teacher_context(const ModelState& state, const Image& image) {
    TeacherContext ctx;
    ctx.f_g = encode_global(state.teacher, state.enc, image);
    ctx.h_g = self_enhance(state.fem, state.fem_cfg, "self_g", ctx.f_g);
    return ctx;
}

InferredFeatures infer_with_text(const ModelState& state, const TeacherContext& ctx,
                                 const std::vector<int>& text_ids) {
    InferredFeatures out;
    Tensor f_t = encode_text(state.text, state.enc, text_ids);
    Tensor h_t = self_enhance(state.fem, state.fem_cfg, "self_t", f_t);
    out.f_ts = cross_enhance_text(state.fem, state.fem_cfg, h_t, ctx.h_g);
    out.f_gs = cross_enhance_visual(state.fem, state.fem_cfg, ctx.h_g, h_t,
                                    VisualStream::kGlobal);
    return out;
}

InferredFeatures infer_without_text(const ModelState& state, const TeacherContext& ctx) {
    InferredFeatures out;
    // no text stream: the global query refines against its own keys
    out.f_gs = cross_enhance_visual(state.fem, state.fem_cfg, ctx.h_g, ctx.h_g,
                                    VisualStream::kGlobal);
    return out;
}

InferredFeatures infer_features(const ModelState& state, const Image& image,
                                const std::optional<std::vector<int>>& text_ids) {
    TeacherContext ctx = teacher_context(state, image);
    return text_ids ? infer_with_text(state, ctx, *text_ids)
                    : infer_without_text(state, ctx);
}

MetricReport linear_probe(const Tensor& train_features, const std::vector<int>& train_labels,
                          const Tensor& test_features, const std::vector<int>& test_labels,
                          const std::vector<std::string>& class_names,
                          const ProbeConfig& cfg, ParamMap* out_head) {
    const int n_classes = static_cast<int>(class_names.size());
    const int dim = train_features.cols();
    if (static_cast<int>(train_labels.size()) != train_features.rows())
        throw ContractError("linear_probe: one label per training row required");

    std::set<int> seen(train_labels.begin(), train_labels.end());
    for (int c = 0; c < n_classes; ++c)
        if (!seen.count(c))
            throw ContractError("linear_probe: class '" + class_names[c] +
                                "' absent from the train split");

    Rng rng(cfg.seed);
    ParamMap head;
    param(head, "w", dim, n_classes, rng);
    param(head, "b", 1, n_classes, rng);

    Tensor x = train_features.detach();
    AdamW opt;
    std::vector<std::pair<std::string, ParamMap*>> groups = {{"probe", &head}};
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        zero_grads(head);
        Tensor logits = add_rowvec(matmul(x, head.at("w")), head.at("b"));
        Tensor nll = rows_select_cols(log_softmax_rows(logits), train_labels);
        Tensor loss = scale(mean_all(nll), -1.0);
        backward(loss);
        opt.step(groups, cfg.lr, cfg.weight_decay);
    }

    Tensor test_logits =
        add_rowvec(matmul(test_features.detach(), head.at("w")), head.at("b"));
    MetricReport report = classification_report(test_logits, test_labels, class_names);
    if (out_head) *out_head = std::move(head);
    return report;
}

std::vector<RankedClass> zero_shot_classify(const ModelState& state, const Image& image,
                                            const std::vector<std::string>& class_prompts) {
    TeacherContext ctx = teacher_context(state, image);
    std::vector<RankedClass> ranking;
    for (std::size_t c = 0; c < class_prompts.size(); ++c) {
        auto ids = tokenize_unpadded(class_prompts[c], state.vocab, state.enc.max_tokens);
        InferredFeatures feats = infer_with_text(state, ctx, ids);
        const double score = cosine_similarity(pool_text(feats.f_ts), feats.f_gs);
        ranking.push_back({static_cast<int>(c), score});
    }
    std::stable_sort(ranking.begin(), ranking.end(), [](const RankedClass& a, const RankedClass& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.index < b.index;
    });
    return ranking;
}

VqaResult toy_vqa(const ModelState& state, const Image& image, const std::string& question,
                  const std::vector<std::string>& answer_vocab) {
    if (answer_vocab.empty()) throw ContractError("toy_vqa: empty answer vocabulary");
    auto question_ids = tokenize_unpadded(question, state.vocab, state.enc.max_tokens);
    InferredFeatures feats = infer_features(state, image, question_ids);

    TokenTrie trie;
    for (const auto& ans : answer_vocab) {
        std::vector<int> ids;
        for (const auto& w : split_words(ans)) ids.push_back(state.vocab.token_id(w));
        trie.candidates.push_back(std::move(ids));
    }
    GenerationResult gen = generate(state.decoder, state.dec_cfg, state.enc, feats.f_ts,
                                    feats.f_gs, DecodeMode::kGreedy, &trie);
    VqaResult out;
    out.answer = detokenize(gen.tokens, state.vocab);
    out.log_prob = gen.log_prob;
    return out;
}

AttentionMap export_attention_map(const ModelState& state, const Image& image,
                                  const std::string& image_id) {
    AttnTrace trace;
    EncodeOptions opts;
    opts.trace = &trace;
    encode_global(state.teacher, state.enc, image, opts);

    const int heads = state.enc.num_heads;
    const int n_patches = state.enc.num_patches();
    if (static_cast<int>(trace.head_weights.size()) < heads)
        throw ContractError("export_attention_map: no attention traces collected");

    AttentionMap map;
    map.image_id = image_id;
    map.grid_side = state.enc.grid_side();
    map.scores.assign(n_patches, 0.0);
    // final block's heads are the last `heads` traces; class token is row 0,
    // patch j sits at column 1 + j
    for (int h = 0; h < heads; ++h) {
        const Tensor& w = trace.head_weights[trace.head_weights.size() - heads + h];
        for (int j = 0; j < n_patches; ++j) map.scores[j] += w.at(0, 1 + j) / heads;
    }

    const auto [mn_it, mx_it] = std::minmax_element(map.scores.begin(), map.scores.end());
    const double mn = *mn_it, mx = *mx_it;
    if (mx - mn < 1e-12) {
        std::fill(map.scores.begin(), map.scores.end(), 0.5);
    } else {
        for (auto& v : map.scores) v = (v - mn) / (mx - mn);
    }

    map.overlay = image;
    const int sp = state.enc.patch_size;
    for (int j = 0; j < n_patches; ++j) {
        const int gr = j / map.grid_side, gc = j % map.grid_side;
        const double v = map.scores[j];
        for (int r = gr * sp; r < (gr + 1) * sp; ++r)
            for (int c = gc * sp; c < (gc + 1) * sp; ++c) {
                map.overlay.at(r, c, 0) = 0.5 * image.at(r, c, 0) + 0.5 * v;
                map.overlay.at(r, c, 1) = 0.5 * image.at(r, c, 1);
                map.overlay.at(r, c, 2) = 0.5 * image.at(r, c, 2) + 0.5 * (1.0 - v);
            }
    }
    map.overlay.clamp01();
    return map;
}

}  // namespace defend
