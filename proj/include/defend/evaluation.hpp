#pragma once

#include <optional>
#include <string>
#include <vector>

#include "defend/checkpoint.hpp"
#include "defend/decoder.hpp"

namespace defend {

struct MetricReport {
    double acc_top1 = 0.0;
    double acc_top5 = 0.0;
    double precision = 0.0;  // macro
    double recall = 0.0;     // macro
    double f1 = 0.0;         // harmonic mean of macro precision and recall
    struct PerClass {
        std::string name;
        int support = 0;
        double precision = 0.0;
        double recall = 0.0;
    };
    std::vector<PerClass> per_class;

    Json to_json() const;
};

// fraction of rows whose label sits among the k best scores; ties resolve
// toward the lower class index
double topk_accuracy(const Tensor& scores, const std::vector<int>& labels, int k);

MetricReport classification_report(const Tensor& scores, const std::vector<int>& labels,
                                   const std::vector<std::string>& class_names);

// P(X >= k) for X ~ Binomial(n, p)
double binomial_p_value(int k, int n, double p);

// ---- teacher-only inference path ----

// Precomputed teacher context so several prompts can share one image pass.
struct TeacherContext {
    Tensor f_g;  // raw global feature
    Tensor h_g;  // self-enhanced
};

TeacherContext teacher_context(const ModelState& state, const Image& image);

struct InferredFeatures {
    Tensor f_gs;           // 1 x D
    Tensor f_ts;           // N_T x D; undefined when no text was given
};

// Teacher-only path: encode_global -> self-attention -> cross enhancement.
// Without text, the global stream is refined against its own self-attended
// keys. The student and the sampler are never touched.
InferredFeatures infer_features(const ModelState& state, const Image& image,
                                const std::optional<std::vector<int>>& text_ids);

InferredFeatures infer_with_text(const ModelState& state, const TeacherContext& ctx,
                                 const std::vector<int>& text_ids);
InferredFeatures infer_without_text(const ModelState& state, const TeacherContext& ctx);

// ---- linear probe ----

struct ProbeConfig {
    int epochs = 400;
    double lr = 0.05;
    double weight_decay = 0.0;
    uint64_t seed = 11;
};

// Trains an affine + softmax head on frozen features; the backbone is
// untouched. Throws when a class has no training rows.
MetricReport linear_probe(const Tensor& train_features, const std::vector<int>& train_labels,
                          const Tensor& test_features, const std::vector<int>& test_labels,
                          const std::vector<std::string>& class_names,
                          const ProbeConfig& cfg, ParamMap* out_head = nullptr);

// ---- zero-shot ----

struct RankedClass {
    int index = 0;
    double score = 0.0;
};

// score(c) = cos(pool_text(f_T*_c), f_G*_c) through the inference path;
// descending, ties toward the lower index.
std::vector<RankedClass> zero_shot_classify(const ModelState& state, const Image& image,
                                            const std::vector<std::string>& class_prompts);

// ---- toy VQA ----

struct VqaResult {
    std::string answer;
    double log_prob = 0.0;
};

// Closed-vocabulary answer decoding: greedy over logits restricted to the
// answer set.
VqaResult toy_vqa(const ModelState& state, const Image& image, const std::string& question,
                  const std::vector<std::string>& answer_vocab);

// ---- attention map ----

struct AttentionMap {
    std::string image_id;
    int grid_side = 0;
    std::vector<double> scores;  // per patch, min-max normalized to [0,1]
    Image overlay;
};

// Class-token attention of the teacher's final block, averaged over heads,
// min-max normalized; a constant map degenerates to all 0.5.
AttentionMap export_attention_map(const ModelState& state, const Image& image,
                                  const std::string& image_id);

}  // namespace defend
