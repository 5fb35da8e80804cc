#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "defend/cli.hpp"
#include "defend/evaluation.hpp"
#include "defend/run_config.hpp"

namespace py = pybind11;
using namespace defend;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw ShapeError("expected a 2D array");
    Tensor t(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::memcpy(t.data(), a.data(), t.size() * sizeof(double));
    return t;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    py::array_t<double> out({t.rows(), t.cols()});
    std::memcpy(out.mutable_data(), t.data(), t.size() * sizeof(double));
    return out;
}

Image image_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 3 || a.shape(2) != 3)
        throw ShapeError("expected an image array of shape (H, W, 3)");
    Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::memcpy(img.pixels.data(), a.data(), img.pixels.size() * sizeof(double));
    return img;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "core operations of the defend vision-language pipeline";

    m.def(
        "scaled_dot_product_attention",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& q,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& k,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& v,
           bool causal) {
            return array_from_tensor(scaled_dot_product_attention(
                tensor_from_array(q), tensor_from_array(k), tensor_from_array(v), causal));
        },
        py::arg("q"), py::arg("k"), py::arg("v"), py::arg("causal") = false);

    m.def(
        "layer_norm",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& gain,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& bias,
           double eps) {
            return array_from_tensor(layer_norm(tensor_from_array(x), tensor_from_array(gain),
                                                tensor_from_array(bias), eps));
        },
        py::arg("x"), py::arg("gain"), py::arg("bias"), py::arg("eps") = kLayerNormEps);

    m.def(
        "cosine_similarity",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
            return cosine_similarity(tensor_from_array(a), tensor_from_array(b));
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "contrastive_loss",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& text,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& global_,
           double tau, bool symmetric) {
            return contrastive_loss(tensor_from_array(text), tensor_from_array(global_), tau,
                                    symmetric)
                .item();
        },
        py::arg("text"), py::arg("global_"), py::arg("tau") = 0.07,
        py::arg("symmetric") = false);

    m.def(
        "patch_coherence_loss",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& fg,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& fp) {
            return patch_coherence_loss(tensor_from_array(fg), tensor_from_array(fp)).item();
        },
        py::arg("f_global"), py::arg("f_patches"));

    m.def(
        "description_loss",
        [](const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>&
               logits,
           const std::vector<std::vector<int>>& targets, int pad_id) {
            std::vector<Tensor> ts;
            ts.reserve(logits.size());
            for (const auto& l : logits) ts.push_back(tensor_from_array(l));
            return description_loss(ts, targets, pad_id).item();
        },
        py::arg("logits"), py::arg("targets"), py::arg("pad_id") = kPadId);

    m.def(
        "ema_update",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& teacher,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& student,
           double alpha) {
            Tensor t = tensor_from_array(teacher);
            Tensor s = tensor_from_array(student);
            ParamMap tm, sm;
            tm.emplace("p", t);
            sm.emplace("p", s);
            ema_update(tm, sm, alpha);
            return array_from_tensor(tm.at("p"));
        },
        py::arg("teacher"), py::arg("student"), py::arg("alpha"));

    m.def(
        "lr_at",
        [](long long step, long long total, long long warmup_steps, long long main_steps,
           double base_lr, double finetune_lr) {
            LrSchedule s{warmup_steps, main_steps, base_lr, finetune_lr};
            return lr_at(step, total, s);
        },
        py::arg("step"), py::arg("total_steps"), py::arg("warmup_steps"),
        py::arg("main_steps"), py::arg("base_lr") = 1e-3, py::arg("finetune_lr") = 1e-4);

    m.def(
        "patch_count",
        [](int height, int width, int patch_size) {
            Image img(height, width);
            return static_cast<int>(patchify(img, patch_size).size());
        },
        py::arg("height"), py::arg("width"), py::arg("patch_size"));

    m.def(
        "saliency_totals",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& image,
           int patch_size, double lambda_, double alpha, double beta, double gamma,
           double min_retention) {
            Image img = image_from_array(image);
            SamplerConfig cfg{lambda_, alpha, beta, gamma, min_retention};
            auto patches = patchify(img, patch_size);
            auto scores = score_all_patches(patches, img.height / patch_size,
                                            img.width / patch_size, cfg);
            py::array_t<double> out(static_cast<py::ssize_t>(scores.size()));
            for (std::size_t i = 0; i < scores.size(); ++i)
                out.mutable_at(static_cast<py::ssize_t>(i)) = scores[i].total;
            return out;
        },
        py::arg("image"), py::arg("patch_size"), py::arg("lambda_") = 0.3,
        py::arg("alpha") = 0.4, py::arg("beta") = 0.4, py::arg("gamma") = 0.2,
        py::arg("min_retention") = 0.25);

    m.def(
        "adaptive_sample",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& image,
           int patch_size, double lambda_, double alpha, double beta, double gamma,
           double min_retention) {
            Image img = image_from_array(image);
            SamplerConfig cfg{lambda_, alpha, beta, gamma, min_retention};
            auto patches = patchify(img, patch_size);
            auto scores = score_all_patches(patches, img.height / patch_size,
                                            img.width / patch_size, cfg);
            return adaptive_sample(patches, scores, cfg);
        },
        py::arg("image"), py::arg("patch_size"), py::arg("lambda_") = 0.3,
        py::arg("alpha") = 0.4, py::arg("beta") = 0.4, py::arg("gamma") = 0.2,
        py::arg("min_retention") = 0.25);

    m.def(
        "build_vocab",
        [](const std::vector<std::string>& corpus, int min_freq) {
            return Vocab::build(corpus, min_freq).tokens();
        },
        py::arg("corpus"), py::arg("min_freq") = 1);

    m.def(
        "tokenize",
        [](const std::string& text, const std::vector<std::string>& vocab_tokens,
           int max_len) {
            return tokenize(text, Vocab::from_tokens(vocab_tokens), max_len);
        },
        py::arg("text"), py::arg("vocab"), py::arg("max_len"));

    m.def(
        "validate_record",
        [](const std::string& json_text) {
            Json j = Json::parse(json_text, nullptr, false);
            if (j.is_discarded())
                return std::vector<std::string>{"record is not valid JSON"};
            return validate_record(j);
        },
        py::arg("json_text"));

    m.def(
        "generate_data",
        [](const std::string& out_dir, int classes, int per_class, int image_size,
           uint64_t seed) {
            GeneratorConfig cfg;
            cfg.n_classes = classes;
            cfg.n_per_class = per_class;
            cfg.image_size = image_size;
            cfg.seed = seed;
            SyntheticDataset ds = generate_synthetic_dataset(cfg);
            write_dataset(out_dir, ds);
            return static_cast<int>(ds.samples.size());
        },
        py::arg("out_dir"), py::arg("classes") = 8, py::arg("per_class") = 60,
        py::arg("image_size") = 64, py::arg("seed") = 7);

    m.def(
        "run_cli", [](const std::vector<std::string>& args) { return cli::run(args); },
        py::arg("args"), "invoke the command-line driver in-process");

    m.attr("PAD_ID") = kPadId;
    m.attr("UNK_ID") = kUnkId;
    m.attr("BOS_ID") = kBosId;
    m.attr("EOS_ID") = kEosId;

    py::register_exception<ShapeError>(m, "ShapeError");
    py::register_exception<NumericError>(m, "NumericError");
    py::register_exception<ContractError>(m, "ContractError");
    py::register_exception<ConfigError>(m, "ConfigurationError");
    py::register_exception<DataError>(m, "DataError");
}
