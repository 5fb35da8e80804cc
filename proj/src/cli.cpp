#include "defend/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "defend/evaluation.hpp"
#include "defend/png_io.hpp"
#include "defend/run_config.hpp"

namespace fs = std::filesystem;

namespace defend::cli {

namespace {

struct CommonFlags {
    std::string config_file;
    std::vector<std::string> overrides;
    std::string preset;
    long long seed = -1;
};

RunConfig resolve_config(const CommonFlags& flags) {
    RunConfig cfg = RunConfig::defaults();
    cfg.apply_preset(flags.preset);
    if (!flags.config_file.empty()) cfg.apply_file(flags.config_file);
    for (const auto& kv : flags.overrides) cfg.apply_override(kv);
    if (flags.seed >= 0) cfg.set_value("train.seed", flags.seed);
    return cfg;
}

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_file, "JSON config file with flat dotted keys");
    cmd->add_option("--set", flags.overrides, "override a config key (key=value)");
    cmd->add_option("--seed", flags.seed, "random seed (falls back to DEFEND_SEED)");
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

int run_generate_data(const std::string& out_dir, const RunConfig& cfg) {
    cfg.write_resolved(out_dir);
    SyntheticDataset ds = generate_synthetic_dataset(cfg.generator_config());
    write_dataset(out_dir, ds);
    std::cout << "generated " << ds.samples.size() << " samples across "
              << ds.class_names.size() << " classes under " << out_dir << "\n";
    std::cout << "zero-shot classes:";
    for (const auto& c : ds.splits.zeroshot_classes) std::cout << " " << c;
    std::cout << "\n";
    return 0;
}

void check_header_overrides(const RunConfig& cfg, const ModelState& state) {
    // an explicit model override that disagrees with the checkpoint header
    // is a configuration error
    if (cfg.get_int("model.dim") != state.enc.model_dim)
        throw ConfigError("model.dim=" + std::to_string(cfg.get_int("model.dim")) +
                          " does not match checkpoint header model_dim=" +
                          std::to_string(state.enc.model_dim));
    if (cfg.get_int("model.heads") != state.enc.num_heads)
        throw ConfigError("model.heads does not match checkpoint header num_heads");
    if (cfg.get_int("model.layers") != state.enc.num_layers)
        throw ConfigError("model.layers does not match checkpoint header num_layers");
    if (cfg.get_int("model.patch_size") != state.enc.patch_size)
        throw ConfigError("model.patch_size does not match checkpoint header patch_size");
}

int run_train(const std::string& data_dir, const std::string& out_dir,
              const std::string& resume_path, const RunConfig& cfg) {
    cfg.write_resolved(out_dir);
    Dataset data = load_dataset(data_dir);

    ModelState state;
    AdamW opt;
    const bool resuming = !resume_path.empty();
    if (resuming) {
        LoadedCheckpoint loaded = load_checkpoint(resume_path);
        state = std::move(loaded.state);
        opt.import_state(loaded.extra, state.step);
    } else {
        state = init_model_state(cfg.encoder_config(data.vocab.size()),
                                 cfg.sampler_config(), cfg.fem_config(),
                                 cfg.decoder_config(), data.vocab, cfg.seed());
    }

    auto save_state = [&](const std::string& tag) {
        auto extra = opt.export_state();
        save_checkpoint((fs::path(out_dir) / ("ckpt_" + tag + ".defend")).string(), state,
                        &extra);
    };
    if (!resuming) save_state("init");

    const fs::path csv_path = fs::path(out_dir) / "loss_log.csv";
    const bool append = resuming && fs::exists(csv_path);
    std::ofstream csv(csv_path, append ? std::ios::app : std::ios::out);
    if (!csv) throw DataError("cannot open " + csv_path.string());
    if (!append) csv << "step,phase,cont,pc,desc,total,lr\n";

    TrainCallbacks callbacks;
    callbacks.on_step = [&](long long step, const std::string& phase, const LossReport& r,
                            double lr) {
        csv << step << "," << phase << "," << fmt_double(r.cont) << "," << fmt_double(r.pc)
            << "," << fmt_double(r.desc) << "," << fmt_double(r.total) << ","
            << fmt_double(lr) << "\n";
        csv.flush();
    };

    TrainConfig tc = cfg.train_config();
    TrainResult result = run_training(data, state, opt, tc, callbacks, save_state);
    save_state("final");

    std::cout << "trained " << result.final_step << " steps; first total "
              << fmt_double(result.first_report.total) << ", last total "
              << fmt_double(result.last_report.total) << "\n";
    return 0;
}

struct ProbeData {
    Tensor train_features, eval_features;
    std::vector<int> train_labels, eval_labels;
    std::vector<std::string> class_names;  // probe-local (train classes only)
};

ProbeData collect_probe_data(const ModelState& state, const Dataset& data,
                             const std::vector<std::string>& train_ids,
                             const std::vector<std::string>& eval_ids) {
    ProbeData pd;
    std::map<int, int> dense;  // dataset class id -> probe index
    for (const auto& id : train_ids) {
        const int c = data.by_id(id).class_id;
        if (!dense.count(c)) {
            dense[c] = static_cast<int>(pd.class_names.size());
            pd.class_names.push_back(data.class_names[c]);
        }
    }
    auto features_of = [&](const std::vector<std::string>& ids, std::vector<int>* labels) {
        std::vector<Tensor> rows;
        for (const auto& id : ids) {
            const auto& s = data.by_id(id);
            auto it = dense.find(s.class_id);
            if (it == dense.end())
                throw ContractError("probe: class '" + data.class_names[s.class_id] +
                                    "' absent from the train split");
            labels->push_back(it->second);
            rows.push_back(infer_features(state, s.image, std::nullopt).f_gs.detach());
        }
        return concat_rows(rows);
    };
    pd.train_features = features_of(train_ids, &pd.train_labels);
    pd.eval_features = features_of(eval_ids, &pd.eval_labels);
    return pd;
}

int run_eval(const std::string& data_dir, const std::string& ckpt_path,
             const std::string& out_dir, const std::string& task, const RunConfig& cfg) {
    cfg.write_resolved(out_dir);
    if (!fs::exists(ckpt_path)) throw DataError("checkpoint not found: " + ckpt_path);
    ModelState state = load_checkpoint(ckpt_path).state;
    check_header_overrides(cfg, state);
    Dataset data = load_dataset(data_dir);

    const bool all = task == "all";
    Json metrics;

    if (all || task == "probe") {
        ProbeData pd = collect_probe_data(state, data, data.splits.train, data.splits.test);
        ParamMap head;
        MetricReport report =
            linear_probe(pd.train_features, pd.train_labels, pd.eval_features,
                         pd.eval_labels, pd.class_names, cfg.probe_config(), &head);
        state.probe = std::move(head);
        Json block = report.to_json();
        block["baseline_centroid_acc"] =
            pixel_mean_centroid_accuracy(data, data.splits.train, data.splits.test);
        metrics["probe"] = block;
        std::cout << "probe acc@1 " << report.acc_top1 << " acc@5 " << report.acc_top5
                  << "\n";
    }

    if (all || task == "zeroshot") {
        std::vector<std::string> prompts;
        for (const auto& name : data.class_names)
            prompts.push_back("a photo of a " + name + " product");
        int correct = 0;
        const auto& ids = data.splits.zeroshot;
        for (const auto& id : ids) {
            const auto& s = data.by_id(id);
            auto ranking = zero_shot_classify(state, s.image, prompts);
            if (ranking.front().index == s.class_id) ++correct;
        }
        const int n = static_cast<int>(ids.size());
        const double chance = 1.0 / static_cast<double>(data.class_names.size());
        Json block;
        block["n"] = n;
        block["correct"] = correct;
        block["accuracy"] = n > 0 ? static_cast<double>(correct) / n : 0.0;
        block["chance"] = chance;
        block["p_value"] = binomial_p_value(correct, n, chance);
        metrics["zero_shot"] = block;
        std::cout << "zero-shot " << correct << "/" << n << " (chance " << chance
                  << ", p " << block["p_value"].get<double>() << ")\n";
    }

    if (all || task == "vqa") {
        std::vector<std::string> answer_vocab;
        for (const auto& c : category_names()) {
            std::string lower;
            for (char ch : c) lower.push_back(static_cast<char>(std::tolower(ch)));
            answer_vocab.push_back(lower);
        }
        for (const auto& c : data.class_names) {
            std::string lower;
            for (char ch : c) lower.push_back(static_cast<char>(std::tolower(ch)));
            answer_vocab.push_back(lower);
        }

        std::ofstream vqa_out(fs::path(out_dir) / "vqa_results.jsonl");
        const int n_answers = static_cast<int>(answer_vocab.size());
        std::map<std::string, int> answer_index;
        for (int i = 0; i < n_answers; ++i) answer_index[answer_vocab[i]] = i;
        std::vector<int> tp(n_answers, 0), fp(n_answers, 0), fn(n_answers, 0);
        int correct = 0, total = 0;
        for (const auto& id : data.splits.test) {
            const auto& s = data.by_id(id);
            std::string cat_lower, sub_lower;
            for (char ch : s.record.category)
                cat_lower.push_back(static_cast<char>(std::tolower(ch)));
            for (char ch : s.record.sub_category)
                sub_lower.push_back(static_cast<char>(std::tolower(ch)));
            const std::pair<std::string, std::string> qa[] = {
                {"what category of product is shown", cat_lower},
                {"what product type is shown", sub_lower}};
            for (const auto& [question, reference] : qa) {
                VqaResult res = toy_vqa(state, s.image, question, answer_vocab);
                const bool match = res.answer == reference;
                correct += match ? 1 : 0;
                ++total;
                const int truth = answer_index.at(reference);
                const auto pred_it = answer_index.find(res.answer);
                if (match) {
                    ++tp[truth];
                } else {
                    ++fn[truth];
                    if (pred_it != answer_index.end()) ++fp[pred_it->second];
                }
                Json row;
                row["image_id"] = id;
                row["question"] = question;
                row["predicted"] = res.answer;
                row["reference"] = reference;
                row["correct"] = match;
                vqa_out << row.dump() << "\n";
            }
        }
        int active_classes = 0;
        double macro_p = 0.0, macro_r = 0.0;
        for (int i = 0; i < n_answers; ++i) {
            if (tp[i] + fn[i] == 0) continue;  // answer never appears as truth
            ++active_classes;
            macro_p += tp[i] + fp[i] > 0 ? static_cast<double>(tp[i]) / (tp[i] + fp[i]) : 0.0;
            macro_r += static_cast<double>(tp[i]) / (tp[i] + fn[i]);
        }
        if (active_classes > 0) {
            macro_p /= active_classes;
            macro_r /= active_classes;
        }
        Json block;
        block["n"] = total;
        block["accuracy"] = total > 0 ? static_cast<double>(correct) / total : 0.0;
        block["f1"] = macro_p + macro_r > 0 ? 2.0 * macro_p * macro_r / (macro_p + macro_r)
                                            : 0.0;
        metrics["vqa"] = block;
        std::cout << "vqa exact-match " << block["accuracy"].get<double>() << " f1 "
                  << block["f1"].get<double>() << "\n";
    }

    if (all || task == "captions") {
        std::ofstream gen_out(fs::path(out_dir) / "generations.jsonl");
        for (const auto& id : data.splits.test) {
            const auto& s = data.by_id(id);
            auto prompt_ids = tokenize_unpadded(s.prompt_text, state.vocab,
                                                state.enc.max_tokens);
            InferredFeatures feats = infer_features(state, s.image, prompt_ids);
            GenerationResult gen = generate(state.decoder, state.dec_cfg, state.enc,
                                            feats.f_ts, feats.f_gs, DecodeMode::kBeam);
            Json row;
            row["image_id"] = id;
            row["generated"] = detokenize(gen.tokens, state.vocab);
            row["reference"] = s.description_text;
            row["log_prob"] = gen.log_prob;
            gen_out << row.dump() << "\n";
        }
    }

    std::ofstream metrics_out(fs::path(out_dir) / "metrics.json");
    if (!metrics_out) throw DataError("cannot write metrics.json under " + out_dir);
    metrics_out << metrics.dump(2) << "\n";
    return 0;
}

int run_attn_map(const std::string& data_dir, const std::string& ckpt_path,
                 const std::string& out_dir, const std::vector<std::string>& ids,
                 const RunConfig& cfg) {
    cfg.write_resolved(out_dir);
    if (!fs::exists(ckpt_path)) throw DataError("checkpoint not found: " + ckpt_path);
    ModelState state = load_checkpoint(ckpt_path).state;
    check_header_overrides(cfg, state);
    Dataset data = load_dataset(data_dir);

    fs::create_directories(fs::path(out_dir) / "attn");
    for (const auto& id : ids) {
        if (!data.index_by_id.count(id)) {
            std::string first = data.samples.front().image_id;
            std::string last = data.samples.back().image_id;
            throw DataError("unknown image id '" + id + "' (valid ids: " + first + " .. " +
                            last + ")");
        }
        const auto& s = data.by_id(id);
        AttentionMap map = export_attention_map(state, s.image, id);
        write_png((fs::path(out_dir) / "attn" / (id + ".png")).string(), map.overlay);
    }
    std::cout << "wrote " << ids.size() << " attention overlays under " << out_dir
              << "/attn\n";
    return 0;
}

int run_validate(const std::string& file, const std::string& out_dir, const RunConfig& cfg) {
    if (!out_dir.empty()) cfg.write_resolved(out_dir);
    std::ifstream in(file);
    if (!in) throw DataError("cannot open " + file);

    // accept either a JSON array or one record per line
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::vector<Json> records;
    std::size_t first_meaningful = content.find_first_not_of(" \t\r\n");
    if (first_meaningful != std::string::npos && content[first_meaningful] == '[') {
        Json arr = Json::parse(content, nullptr, false);
        if (arr.is_discarded() || !arr.is_array())
            throw DataError(file + ": malformed JSON array");
        for (const auto& r : arr) records.push_back(r);
    } else {
        std::size_t pos = 0;
        int line_no = 0;
        while (pos < content.size()) {
            std::size_t end = content.find('\n', pos);
            if (end == std::string::npos) end = content.size();
            const std::string line = content.substr(pos, end - pos);
            pos = end + 1;
            ++line_no;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            Json r = Json::parse(line, nullptr, false);
            if (r.is_discarded()) {
                std::cout << "record " << line_no << ": malformed JSON\n";
                records.push_back(Json());  // counts as invalid below
                continue;
            }
            records.push_back(r);
        }
    }

    int invalid = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto errors = validate_record(records[i]);
        if (!errors.empty()) {
            ++invalid;
            for (const auto& e : errors)
                std::cout << "record " << (i + 1) << ": " << e << "\n";
        }
    }
    std::cout << records.size() - invalid << "/" << records.size() << " records valid\n";
    if (invalid > 0) throw DataError(std::to_string(invalid) + " invalid records in " + file);
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"vision-language pretraining pipeline with teacher-student distillation"};
    app.require_subcommand(1);

    CommonFlags gen_flags, train_flags, eval_flags, attn_flags, val_flags;
    std::string gen_out, train_data, train_out, train_resume, eval_data, eval_ckpt,
        eval_out, eval_task = "all", attn_data, attn_ckpt, attn_out, val_file, val_out;
    std::string attn_ids_csv;
    long long gen_classes = -1, gen_per_class = -1, gen_image_size = -1;

    auto* gen = app.add_subcommand("generate-data", "write a synthetic dataset");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--classes", gen_classes, "number of classes (>= 4)");
    gen->add_option("--per-class", gen_per_class, "samples per class");
    gen->add_option("--image-size", gen_image_size, "square image side");
    add_common(gen, gen_flags);

    auto* train = app.add_subcommand("train", "run the three-phase training schedule");
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--out", train_out, "output directory")->required();
    train->add_option("--resume", train_resume, "checkpoint to resume from");
    train->add_option("--preset", train_flags.preset, "desk-smoke | desk-full");
    add_common(train, train_flags);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--data", eval_data, "dataset directory")->required();
    eval->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
    eval->add_option("--out", eval_out, "output directory")->required();
    eval->add_option("--task", eval_task, "all | probe | zeroshot | vqa | captions");
    add_common(eval, eval_flags);

    auto* attn = app.add_subcommand("attn-map", "export attention overlays");
    attn->add_option("--data", attn_data, "dataset directory")->required();
    attn->add_option("--ckpt", attn_ckpt, "checkpoint path")->required();
    attn->add_option("--out", attn_out, "output directory")->required();
    attn->add_option("--ids", attn_ids_csv, "comma-separated image ids")->required();
    add_common(attn, attn_flags);

    auto* val = app.add_subcommand("validate", "validate annotation records in a file");
    val->add_option("--file", val_file, "dataset.jsonl or a JSON array")->required();
    val->add_option("--out", val_out, "optional output directory for the resolved config");
    add_common(val, val_flags);

    try {
        std::vector<const char*> argv;
        argv.push_back("defend");
        for (const auto& a : args) argv.push_back(a.c_str());
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) {
            RunConfig cfg = resolve_config(gen_flags);
            if (gen_classes >= 0) cfg.set_value("data.classes", gen_classes);
            if (gen_per_class >= 0) cfg.set_value("data.per_class", gen_per_class);
            if (gen_image_size >= 0) cfg.set_value("data.image_size", gen_image_size);
            return run_generate_data(gen_out, cfg);
        }
        if (train->parsed())
            return run_train(train_data, train_out, train_resume, resolve_config(train_flags));
        if (eval->parsed()) {
            if (eval_task != "all" && eval_task != "probe" && eval_task != "zeroshot" &&
                eval_task != "vqa" && eval_task != "captions")
                throw ConfigError("unknown eval task '" + eval_task + "'");
            return run_eval(eval_data, eval_ckpt, eval_out, eval_task,
                            resolve_config(eval_flags));
        }
        if (attn->parsed()) {
            std::vector<std::string> ids;
            std::size_t pos = 0;
            while (pos <= attn_ids_csv.size()) {
                std::size_t comma = attn_ids_csv.find(',', pos);
                if (comma == std::string::npos) comma = attn_ids_csv.size();
                if (comma > pos) ids.push_back(attn_ids_csv.substr(pos, comma - pos));
                pos = comma + 1;
            }
            if (ids.empty()) throw ConfigError("--ids is empty");
            return run_attn_map(attn_data, attn_ckpt, attn_out, ids,
                                resolve_config(attn_flags));
        }
        if (val->parsed()) return run_validate(val_file, val_out, resolve_config(val_flags));
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace defend::cli
