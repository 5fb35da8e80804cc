#include "defend/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace defend {

ModelState init_model_state(const EncoderConfig& enc, const SamplerConfig& sampler,
                            const FemConfig& fem, const DecoderConfig& dec,
                            const Vocab& vocab, uint64_t seed) {
    enc.validate();
    sampler.validate();
    dec.validate();
    if (vocab.size() != enc.vocab_size)
        throw ConfigError("init_model_state: vocab size " + std::to_string(vocab.size()) +
                          " does not match encoder config " +
                          std::to_string(enc.vocab_size));

    ModelState st;
    st.enc = enc;
    st.sampler = sampler;
    st.fem_cfg = fem;
    st.dec_cfg = dec;
    st.vocab = vocab;

    Rng rng(seed);
    st.student = init_vision_params(enc, rng);
    st.teacher = clone_params(st.student, /*requires_grad=*/false);
    st.text = init_text_params(enc, rng);
    st.fem = init_fem_params(fem, rng);
    st.decoder = init_decoder_params(dec, enc, rng);
    return st;
}

namespace {

constexpr char kMagic[] = "DEFENDCKPT1\n";

void manifest_group(Json& arrays, const std::string& prefix, const ParamMap& params,
                    std::size_t& offset) {
    for (const auto& [name, t] : params) {
        Json entry;
        entry["name"] = prefix + "/" + name;
        entry["rows"] = t.rows();
        entry["cols"] = t.cols();
        entry["offset"] = offset;
        arrays.push_back(entry);
        offset += t.size() * sizeof(double);
    }
}

void write_group(std::ofstream& out, const ParamMap& params) {
    for (const auto& [name, t] : params)
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelState& state,
                     const std::map<std::string, ParamMap>* extra) {
    Json header;
    header["format"] = "defend-checkpoint-v1";
    // exact key names are part of the on-disk contract
    Json config;
    config["model_dim"] = state.enc.model_dim;
    config["num_layers"] = state.enc.num_layers;
    config["num_heads"] = state.enc.num_heads;
    config["patch_size"] = state.enc.patch_size;
    config["vocab_size"] = state.enc.vocab_size;
    config["lambda_threshold"] = state.sampler.lambda_threshold;
    config["image_size"] = state.enc.image_size;
    config["max_tokens"] = state.enc.max_tokens;
    config["positional"] = to_string(state.enc.positional);
    config["sampler_alpha"] = state.sampler.alpha;
    config["sampler_beta"] = state.sampler.beta;
    config["sampler_gamma"] = state.sampler.gamma;
    config["min_retention_fraction"] = state.sampler.min_retention_fraction;
    config["fem_residual"] = state.fem_cfg.residual;
    config["fem_text_attends_to"] = to_string(state.fem_cfg.text_attends_to);
    config["decoder_layers"] = state.dec_cfg.num_layers;
    config["decoder_max_length"] = state.dec_cfg.max_length;
    config["decoder_beam_size"] = state.dec_cfg.beam_size;
    header["config"] = config;
    header["vocab"] = state.vocab.tokens();
    header["step"] = state.step;
    header["phase_index"] = state.phase_index;
    header["epochs_done"] = state.epochs_done;

    Json arrays = Json::array();
    std::size_t offset = 0;
    const std::map<std::string, const ParamMap*> groups = {
        {"student", &state.student}, {"teacher", &state.teacher}, {"text", &state.text},
        {"fem", &state.fem},         {"decoder", &state.decoder}, {"probe", &state.probe}};
    for (const auto& [prefix, params] : groups)
        manifest_group(arrays, prefix, *params, offset);
    if (extra)
        for (const auto& [prefix, params] : *extra)
            manifest_group(arrays, "extra:" + prefix, params, offset);
    header["arrays"] = arrays;

    const std::string header_text = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("save_checkpoint: cannot open " + path);
    out.write(kMagic, sizeof(kMagic) - 1);
    const uint64_t header_len = header_text.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& [prefix, params] : groups) write_group(out, *params);
    if (extra)
        for (const auto& [prefix, params] : *extra) write_group(out, params);
    if (!out) throw DataError("save_checkpoint: write failed for " + path);
}

Json read_checkpoint_header(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint not found: " + path);
    char magic[sizeof(kMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
        throw DataError("not a checkpoint file: " + path);
    uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw DataError("truncated checkpoint header: " + path);
    return Json::parse(header_text);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    Json header = read_checkpoint_header(path);
    if (header.value("format", "") != "defend-checkpoint-v1")
        throw DataError("unsupported checkpoint format in " + path);

    LoadedCheckpoint loaded;
    ModelState& st = loaded.state;
    const Json& config = header.at("config");
    st.enc.model_dim = config.at("model_dim").get<int>();
    st.enc.num_layers = config.at("num_layers").get<int>();
    st.enc.num_heads = config.at("num_heads").get<int>();
    st.enc.patch_size = config.at("patch_size").get<int>();
    st.enc.vocab_size = config.at("vocab_size").get<int>();
    st.enc.image_size = config.at("image_size").get<int>();
    st.enc.max_tokens = config.at("max_tokens").get<int>();
    st.enc.positional = positional_mode_from_string(config.at("positional").get<std::string>());
    st.sampler.lambda_threshold = config.at("lambda_threshold").get<double>();
    st.sampler.alpha = config.at("sampler_alpha").get<double>();
    st.sampler.beta = config.at("sampler_beta").get<double>();
    st.sampler.gamma = config.at("sampler_gamma").get<double>();
    st.sampler.min_retention_fraction = config.at("min_retention_fraction").get<double>();
    st.fem_cfg.model_dim = st.enc.model_dim;
    st.fem_cfg.num_heads = st.enc.num_heads;
    st.fem_cfg.residual = config.at("fem_residual").get<bool>();
    st.fem_cfg.text_attends_to =
        text_attends_to_from_string(config.at("fem_text_attends_to").get<std::string>());
    st.dec_cfg.num_layers = config.at("decoder_layers").get<int>();
    st.dec_cfg.max_length = config.at("decoder_max_length").get<int>();
    st.dec_cfg.beam_size = config.at("decoder_beam_size").get<int>();
    st.vocab = Vocab::from_tokens(header.at("vocab").get<std::vector<std::string>>());
    st.step = header.value("step", 0LL);
    st.phase_index = header.value("phase_index", 0);
    st.epochs_done = header.value("epochs_done", 0);

    std::ifstream in(path, std::ios::binary);
    in.seekg(static_cast<std::streamoff>(sizeof(kMagic) - 1));
    uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    in.seekg(static_cast<std::streamoff>(header_len), std::ios::cur);
    const std::streamoff blob_start = in.tellg();

    for (const auto& entry : header.at("arrays")) {
        const std::string full = entry.at("name").get<std::string>();
        const int rows = entry.at("rows").get<int>();
        const int cols = entry.at("cols").get<int>();
        const std::size_t offset = entry.at("offset").get<std::size_t>();

        Tensor t(rows, cols);
        in.seekg(blob_start + static_cast<std::streamoff>(offset));
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!in) throw DataError("truncated checkpoint arrays in " + path);

        const auto slash = full.find('/');
        if (slash == std::string::npos) throw DataError("malformed array name " + full);
        const std::string group = full.substr(0, slash);
        const std::string name = full.substr(slash + 1);
        if (group == "student") {
            t.set_requires_grad(true);
            loaded.state.student.emplace(name, std::move(t));
        } else if (group == "teacher") {
            loaded.state.teacher.emplace(name, std::move(t));
        } else if (group == "text") {
            t.set_requires_grad(true);
            loaded.state.text.emplace(name, std::move(t));
        } else if (group == "fem") {
            t.set_requires_grad(true);
            loaded.state.fem.emplace(name, std::move(t));
        } else if (group == "decoder") {
            t.set_requires_grad(true);
            loaded.state.decoder.emplace(name, std::move(t));
        } else if (group == "probe") {
            t.set_requires_grad(true);
            loaded.state.probe.emplace(name, std::move(t));
        } else if (group.rfind("extra:", 0) == 0) {
            loaded.extra[group.substr(6)].emplace(name, std::move(t));
        } else {
            throw DataError("unknown checkpoint group " + group);
        }
    }
    return loaded;
}

}  // namespace defend
