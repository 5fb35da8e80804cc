#include "defend/run_config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace defend {

RunConfig RunConfig::defaults() {
    RunConfig cfg;
    auto& v = cfg.values_;
    v["data.classes"] = 8;
    v["data.per_class"] = 60;
    v["data.image_size"] = 64;

    v["model.dim"] = 128;
    v["model.layers"] = 4;
    v["model.heads"] = 4;
    v["model.patch_size"] = 8;
    v["model.max_tokens"] = 16;
    v["model.positional"] = "absolute";
    v["model.dropout"] = 0.0;

    v["sampler.lambda"] = 0.3;
    v["sampler.alpha"] = 0.4;
    v["sampler.beta"] = 0.4;
    v["sampler.gamma"] = 0.2;
    v["sampler.min_retention"] = 0.25;

    v["fem.residual"] = true;
    v["fem.text_attends_to"] = "global";

    v["loss.tau"] = 0.07;
    v["loss.w_cont"] = 1.0;
    v["loss.w_pc"] = 1.0;
    v["loss.w_desc"] = 1.0;
    v["loss.symmetric"] = false;

    v["decoder.layers"] = 2;
    v["decoder.max_length"] = 30;
    v["decoder.beam_size"] = 4;

    v["train.batch_size"] = 32;
    v["train.ema_alpha"] = 0.999;
    v["train.base_lr"] = 1e-3;
    v["train.finetune_lr"] = 1e-4;
    v["train.weight_decay"] = 0.05;
    v["train.warmup_epochs"] = 2;
    v["train.main_epochs"] = 20;
    v["train.finetune_epochs"] = 8;
    v["train.finetune_accum"] = 4;
    v["train.max_steps"] = 0;
    v["train.checkpoint_every"] = 0;

    uint64_t seed = 7;
    if (const char* env = std::getenv("DEFEND_SEED")) seed = std::strtoull(env, nullptr, 10);
    v["train.seed"] = seed;

    v["aug.flip_prob"] = 0.5;
    v["aug.rotate_deg"] = 10.0;
    v["aug.jitter_lo"] = 0.8;
    v["aug.jitter_hi"] = 1.2;
    v["aug.crop_lo"] = 0.85;
    v["aug.crop_hi"] = 1.0;

    v["eval.probe_epochs"] = 400;
    v["eval.probe_lr"] = 0.05;
    return cfg;
}

const Json& RunConfig::at(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown configuration key '" + key + "'");
    return it->second;
}

void RunConfig::apply_preset(const std::string& name) {
    if (name.empty()) return;
    if (name == "desk-smoke") {
        values_["train.warmup_epochs"] = 1;
        values_["train.main_epochs"] = 2;
        values_["train.finetune_epochs"] = 1;
    } else if (name == "desk-full") {
        values_["train.warmup_epochs"] = 2;
        values_["train.main_epochs"] = 20;
        values_["train.finetune_epochs"] = 8;
    } else {
        throw ConfigError("unknown preset '" + name + "' (expected desk-smoke or desk-full)");
    }
}

void RunConfig::apply_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    Json j = Json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw ConfigError("config file " + path + " is not a JSON object");
    for (const auto& [key, value] : j.items()) set_value(key, value);
}

void RunConfig::set_value(const std::string& key, const Json& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown configuration key '" + key + "'");
    const Json& def = it->second;
    if (def.is_boolean()) {
        if (!value.is_boolean())
            throw ConfigError("key '" + key + "' expects a boolean");
    } else if (def.is_number_integer() || def.is_number_unsigned()) {
        if (!value.is_number() || (value.is_number_float() &&
                                   value.get<double>() != static_cast<long long>(
                                                              value.get<double>())))
            throw ConfigError("key '" + key + "' expects an integer");
    } else if (def.is_number_float()) {
        if (!value.is_number()) throw ConfigError("key '" + key + "' expects a number");
    } else if (def.is_string()) {
        if (!value.is_string()) throw ConfigError("key '" + key + "' expects a string");
    }
    it->second = value;
}

void RunConfig::apply_override(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
        throw ConfigError("--set expects key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    const std::string raw = kv.substr(eq + 1);
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown configuration key '" + key + "'");
    const Json& def = it->second;
    try {
        if (def.is_boolean()) {
            if (raw == "true" || raw == "1")
                it->second = true;
            else if (raw == "false" || raw == "0")
                it->second = false;
            else
                throw ConfigError("");
        } else if (def.is_number_integer() || def.is_number_unsigned()) {
            std::size_t used = 0;
            const long long parsed = std::stoll(raw, &used);
            if (used != raw.size()) throw ConfigError("");
            it->second = parsed;
        } else if (def.is_number_float()) {
            std::size_t used = 0;
            const double parsed = std::stod(raw, &used);
            if (used != raw.size()) throw ConfigError("");
            it->second = parsed;
        } else {
            it->second = raw;
        }
    } catch (const std::exception&) {
        throw ConfigError("cannot parse value '" + raw + "' for key '" + key + "'");
    }
}

int RunConfig::get_int(const std::string& key) const { return at(key).get<int>(); }
double RunConfig::get_double(const std::string& key) const { return at(key).get<double>(); }
bool RunConfig::get_bool(const std::string& key) const { return at(key).get<bool>(); }
std::string RunConfig::get_string(const std::string& key) const {
    return at(key).get<std::string>();
}

Json RunConfig::to_json() const {
    Json j;
    for (const auto& [key, value] : values_) j[key] = value;
    return j;
}

void RunConfig::write_resolved(const std::string& out_dir) const {
    fs::create_directories(out_dir);
    std::ofstream out(fs::path(out_dir) / "resolved_config.json");
    if (!out) throw DataError("cannot write resolved_config.json under " + out_dir);
    out << to_json().dump(2) << "\n";
}

uint64_t RunConfig::seed() const {
    return at("train.seed").get<uint64_t>();
}

GeneratorConfig RunConfig::generator_config() const {
    GeneratorConfig g;
    g.n_classes = get_int("data.classes");
    g.n_per_class = get_int("data.per_class");
    g.image_size = get_int("data.image_size");
    g.patch_size = get_int("model.patch_size");
    g.seed = seed();
    return g;
}

SamplerConfig RunConfig::sampler_config() const {
    SamplerConfig s;
    s.lambda_threshold = get_double("sampler.lambda");
    s.alpha = get_double("sampler.alpha");
    s.beta = get_double("sampler.beta");
    s.gamma = get_double("sampler.gamma");
    s.min_retention_fraction = get_double("sampler.min_retention");
    s.validate();
    return s;
}

EncoderConfig RunConfig::encoder_config(int vocab_size) const {
    EncoderConfig e;
    e.model_dim = get_int("model.dim");
    e.num_layers = get_int("model.layers");
    e.num_heads = get_int("model.heads");
    e.patch_size = get_int("model.patch_size");
    e.image_size = get_int("data.image_size");
    e.max_tokens = get_int("model.max_tokens");
    e.vocab_size = vocab_size;
    e.dropout = get_double("model.dropout");
    e.positional = positional_mode_from_string(get_string("model.positional"));
    e.validate();
    return e;
}

FemConfig RunConfig::fem_config() const {
    FemConfig f;
    f.model_dim = get_int("model.dim");
    f.num_heads = get_int("model.heads");
    f.residual = get_bool("fem.residual");
    f.text_attends_to = text_attends_to_from_string(get_string("fem.text_attends_to"));
    return f;
}

DecoderConfig RunConfig::decoder_config() const {
    DecoderConfig d;
    d.num_layers = get_int("decoder.layers");
    d.max_length = get_int("decoder.max_length");
    d.beam_size = get_int("decoder.beam_size");
    d.validate();
    return d;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.phases = {{"warmup", get_int("train.warmup_epochs"), {true, false, false}, 1},
                {"main", get_int("train.main_epochs"), {true, true, true}, 1},
                {"finetune", get_int("train.finetune_epochs"), {true, true, true},
                 get_int("train.finetune_accum")}};
    t.ema_alpha = get_double("train.ema_alpha");
    t.base_lr = get_double("train.base_lr");
    t.finetune_lr = get_double("train.finetune_lr");
    t.weight_decay = get_double("train.weight_decay");
    t.batch_size = get_int("train.batch_size");
    t.tau = get_double("loss.tau");
    t.weights.cont = get_double("loss.w_cont");
    t.weights.pc = get_double("loss.w_pc");
    t.weights.desc = get_double("loss.w_desc");
    t.symmetric_contrastive = get_bool("loss.symmetric");
    t.augment.flip_prob = get_double("aug.flip_prob");
    t.augment.max_rotate_deg = get_double("aug.rotate_deg");
    t.augment.jitter_lo = get_double("aug.jitter_lo");
    t.augment.jitter_hi = get_double("aug.jitter_hi");
    t.augment.crop_lo = get_double("aug.crop_lo");
    t.augment.crop_hi = get_double("aug.crop_hi");
    t.seed = seed();
    t.max_steps = at("train.max_steps").get<long long>();
    t.checkpoint_every = at("train.checkpoint_every").get<long long>();
    t.validate();
    return t;
}

ProbeConfig RunConfig::probe_config() const {
    ProbeConfig p;
    p.epochs = get_int("eval.probe_epochs");
    p.lr = get_double("eval.probe_lr");
    p.seed = seed() + 1;
    return p;
}

}  // namespace defend
