#include "defend/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "defend/fem.hpp"

namespace defend {

TrainConfig TrainConfig::desk_smoke() {
    TrainConfig cfg;
    cfg.phases = {{"warmup", 1, {true, false, false}, 1},
                  {"main", 2, {true, true, true}, 1},
                  {"finetune", 1, {true, true, true}, 4}};
    return cfg;
}

TrainConfig TrainConfig::desk_full() {
    TrainConfig cfg;
    cfg.phases = {{"warmup", 2, {true, false, false}, 1},
                  {"main", 20, {true, true, true}, 1},
                  {"finetune", 8, {true, true, true}, 4}};
    return cfg;
}

void TrainConfig::validate() const {
    if (phases.empty()) throw ConfigError("train: at least one phase required");
    for (const auto& p : phases) {
        if (p.epochs <= 0) throw ConfigError("train: phase '" + p.name + "' needs epochs > 0");
        if (p.grad_accum < 1) throw ConfigError("train: grad_accum must be >= 1");
    }
    if (ema_alpha < 0.0 || ema_alpha > 1.0)
        throw ConfigError("train: ema_alpha must be in [0,1]");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (tau <= 0.0) throw ConfigError("train: tau must be positive");
    weights.validate();
}

void ema_update(ParamMap& teacher, const ParamMap& student, double alpha) {
    if (teacher.size() != student.size())
        throw ContractError("ema_update: parameter collections differ in size");
    auto ti = teacher.begin();
    auto si = student.begin();
    for (; ti != teacher.end(); ++ti, ++si) {
        if (ti->first != si->first)
            throw ContractError("ema_update: parameter name mismatch: " + ti->first +
                                " vs " + si->first);
        Tensor& t = ti->second;
        const Tensor& s = si->second;
        if (t.rows() != s.rows() || t.cols() != s.cols())
            throw ContractError("ema_update: shape mismatch at " + ti->first);
        double* tv = t.data();
        const double* sv = s.data();
        for (std::size_t i = 0; i < t.size(); ++i)
            tv[i] = alpha * tv[i] + (1.0 - alpha) * sv[i];
    }
}

double lr_at(long long step, long long total_steps, const LrSchedule& sched) {
    if (step < 0 || (total_steps > 0 && step > total_steps))
        throw ContractError("lr_at: step outside schedule");
    if (step < sched.warmup_steps)
        return sched.base_lr * static_cast<double>(step) /
               static_cast<double>(sched.warmup_steps);
    const long long into_main = step - sched.warmup_steps;
    if (into_main <= sched.main_steps && sched.main_steps > 0) {
        const double progress =
            static_cast<double>(into_main) / static_cast<double>(sched.main_steps);
        return 0.5 * sched.base_lr * (1.0 + std::cos(3.14159265358979323846 * progress));
    }
    return sched.finetune_lr;
}

Image augment(const Image& image, const AugmentConfig& cfg, Rng& rng) {
    // every random draw happens unconditionally so the stream is stable
    const bool flip = rng.uniform() < cfg.flip_prob;
    const double angle = rng.uniform(-cfg.max_rotate_deg, cfg.max_rotate_deg);
    const double brightness = rng.uniform(cfg.jitter_lo, cfg.jitter_hi);
    const double contrast = rng.uniform(cfg.jitter_lo, cfg.jitter_hi);
    const double crop_scale = rng.uniform(cfg.crop_lo, cfg.crop_hi);
    const double top_frac = rng.uniform();
    const double left_frac = rng.uniform();

    Image out = flip ? horizontal_flip(image) : image;
    out = rotate_about_center(out, angle);

    if (brightness != 1.0)
        for (auto& v : out.pixels) v *= brightness;
    if (contrast != 1.0) {
        double mean = 0.0;
        const std::size_t n = out.pixels.size() / 3;
        for (std::size_t i = 0; i < n; ++i)
            mean += luminance(out.pixels[i * 3], out.pixels[i * 3 + 1], out.pixels[i * 3 + 2]);
        mean /= static_cast<double>(n);
        for (auto& v : out.pixels) v = (v - mean) * contrast + mean;
    }

    const int crop_h = std::max(1, static_cast<int>(std::lround(crop_scale * out.height)));
    const int crop_w = std::max(1, static_cast<int>(std::lround(crop_scale * out.width)));
    const int top = static_cast<int>(top_frac * (out.height - crop_h + 1)) %
                    std::max(1, out.height - crop_h + 1);
    const int left = static_cast<int>(left_frac * (out.width - crop_w + 1)) %
                     std::max(1, out.width - crop_w + 1);
    out = crop_resize(out, top, left, crop_h, crop_w);

    out.clamp01();
    return out;
}

void AdamW::step(const std::vector<std::pair<std::string, ParamMap*>>& groups, double lr,
                 double weight_decay) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& [group, params] : groups) {
        for (auto& [name, p] : *params) {
            if (!p.requires_grad()) continue;
            const std::string key = group + "/" + name;
            auto mi = m_.find(key);
            if (mi == m_.end()) {
                mi = m_.emplace(key, Tensor::zeros(p.rows(), p.cols())).first;
                v_.emplace(key, Tensor::zeros(p.rows(), p.cols()));
            }
            Tensor& m = mi->second;
            Tensor& v = v_.at(key);
            const double* g = p.grad();
            double* mv = m.data();
            double* vv = v.data();
            double* pv = p.data();
            for (std::size_t i = 0; i < p.size(); ++i) {
                mv[i] = beta1_ * mv[i] + (1.0 - beta1_) * g[i];
                vv[i] = beta2_ * vv[i] + (1.0 - beta2_) * g[i] * g[i];
                const double mhat = mv[i] / bc1;
                const double vhat = vv[i] / bc2;
                pv[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay * pv[i]);
            }
        }
    }
}

std::map<std::string, ParamMap> AdamW::export_state() const {
    std::map<std::string, ParamMap> out;
    out["adam_m"] = ParamMap();
    out["adam_v"] = ParamMap();
    for (const auto& [key, t] : m_) out["adam_m"].emplace(key, t.clone());
    for (const auto& [key, t] : v_) out["adam_v"].emplace(key, t.clone());
    return out;
}

void AdamW::import_state(const std::map<std::string, ParamMap>& extra, long long step_count) {
    t_ = step_count;
    m_.clear();
    v_.clear();
    auto mi = extra.find("adam_m");
    auto vi = extra.find("adam_v");
    if (mi != extra.end())
        for (const auto& [key, t] : mi->second) m_.emplace(key, t.clone());
    if (vi != extra.end())
        for (const auto& [key, t] : vi->second) v_.emplace(key, t.clone());
}

namespace {

struct MicroResult {
    Tensor total;  // graph root, scaled by the micro batch share
    double cont = 0.0, pc = 0.0, desc = 0.0;
    int size = 0;
};

uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t x = a + 0x9E3779B97F4A7C15ULL * (b + 1);
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    return x ^ (x >> 31);
}

MicroResult forward_micro_batch(ModelState& state, const std::vector<SampleRef>& micro,
                                const ActiveLosses& active, const TrainConfig& cfg,
                                double share) {
    std::vector<Tensor> text_rows, global_rows;
    std::vector<Tensor> pc_terms;
    std::vector<Tensor> desc_logits;
    std::vector<std::vector<int>> desc_targets;

    for (const auto& ref : micro) {
        const LoadedSample& s = *ref.sample;
        Rng aug_rng(ref.augment_seed);
        Image img = augment(s.image, cfg.augment, aug_rng);

        // teacher branch: EMA shadow, never part of the gradient graph
        Tensor f_g = encode_global(state.teacher, state.enc, img);

        std::vector<int> prompt_ids =
            tokenize_unpadded(s.prompt_text, state.vocab, state.enc.max_tokens);
        Tensor f_t = encode_text(state.text, state.enc, prompt_ids);

        Tensor h_t = self_enhance(state.fem, state.fem_cfg, "self_t", f_t);
        Tensor h_g = self_enhance(state.fem, state.fem_cfg, "self_g", f_g);

        Tensor f_p, h_p;
        if (active.pc ||
            state.fem_cfg.text_attends_to == TextAttendsTo::kConcatGlobalPatch) {
            auto patches = patchify(img, state.enc.patch_size);
            auto scores = score_all_patches(patches, state.enc.grid_side(),
                                            state.enc.grid_side(), state.sampler);
            auto retained_idx = adaptive_sample(patches, scores, state.sampler);
            std::vector<Patch> retained;
            retained.reserve(retained_idx.size());
            for (int idx : retained_idx) retained.push_back(patches[idx]);
            f_p = encode_patches(state.student, state.enc, retained);
            h_p = self_enhance(state.fem, state.fem_cfg, "self_p", f_p);
        }

        Tensor text_kv = h_g;
        if (state.fem_cfg.text_attends_to == TextAttendsTo::kConcatGlobalPatch)
            text_kv = concat_rows({h_g, h_p});
        Tensor f_ts = cross_enhance_text(state.fem, state.fem_cfg, h_t, text_kv);
        Tensor f_gs = cross_enhance_visual(state.fem, state.fem_cfg, h_g, h_t,
                                           VisualStream::kGlobal);

        if (active.cont) {
            text_rows.push_back(pool_text(f_ts));
            global_rows.push_back(f_gs);
        }
        if (active.pc) {
            Tensor f_ps = cross_enhance_visual(state.fem, state.fem_cfg, h_p, h_t,
                                               VisualStream::kPatch);
            pc_terms.push_back(patch_coherence_loss(f_gs, f_ps));
        }
        if (active.desc) {
            const int max_target = state.dec_cfg.max_length + 2;
            std::vector<int> target =
                tokenize_unpadded(s.description_text, state.vocab, max_target);
            Tensor logits = decoder_teacher_forced(state.decoder, state.dec_cfg, state.enc,
                                                   target, f_ts, f_gs);
            // score predictions of everything after BOS
            desc_logits.push_back(slice_rows(logits, 1, logits.rows() - 1));
            desc_targets.emplace_back(target.begin() + 1, target.end());
        }
    }

    MicroResult result;
    result.size = static_cast<int>(micro.size());
    std::vector<Tensor> weighted;
    if (active.cont) {
        Tensor cont = contrastive_loss(concat_rows(text_rows), concat_rows(global_rows),
                                       cfg.tau, cfg.symmetric_contrastive);
        result.cont = cont.item();
        weighted.push_back(scale(cont, cfg.weights.cont));
    }
    if (active.pc) {
        Tensor pc = mean_all(concat_rows(pc_terms));
        result.pc = pc.item();
        weighted.push_back(scale(pc, cfg.weights.pc));
    }
    if (active.desc) {
        Tensor desc = description_loss(desc_logits, desc_targets, kPadId);
        result.desc = desc.item();
        weighted.push_back(scale(desc, cfg.weights.desc));
    }
    if (weighted.empty()) throw ConfigError("train_step: no active losses");
    Tensor total = weighted[0];
    for (std::size_t i = 1; i < weighted.size(); ++i) total = add(total, weighted[i]);
    result.total = scale(total, share);
    return result;
}

}  // namespace

LossReport train_step(ModelState& state, AdamW& opt, const StepContext& ctx) {
    if (ctx.micro_batches.empty() || ctx.micro_batches.front().empty())
        throw ContractError("train_step: empty batch");
    const TrainConfig& cfg = *ctx.cfg;

    int total_samples = 0;
    for (const auto& micro : ctx.micro_batches)
        total_samples += static_cast<int>(micro.size());

    zero_grads(state.student);
    zero_grads(state.text);
    zero_grads(state.fem);
    zero_grads(state.decoder);

    double cont = 0.0, pc = 0.0, desc = 0.0;
    for (const auto& micro : ctx.micro_batches) {
        const double share = static_cast<double>(micro.size()) / total_samples;
        MicroResult r = forward_micro_batch(state, micro, ctx.active, cfg, share);
        cont += r.cont * share;
        pc += r.pc * share;
        desc += r.desc * share;
        backward(r.total);
    }

    // combine() is the finiteness gate: it aborts with the offending term
    LossReport report = combine(cont, pc, desc, cfg.weights, total_samples);

    std::vector<std::pair<std::string, ParamMap*>> groups = {{"student", &state.student},
                                                             {"text", &state.text},
                                                             {"fem", &state.fem},
                                                             {"decoder", &state.decoder}};
    opt.step(groups, ctx.lr, cfg.weight_decay);
    ema_update(state.teacher, state.student, cfg.ema_alpha);
    state.step += 1;
    return report;
}

TrainResult run_training(const Dataset& data, ModelState& state, AdamW& opt,
                         const TrainConfig& cfg, const TrainCallbacks& callbacks,
                         const std::function<void(const std::string& tag)>& save_cb) {
    cfg.validate();
    auto train_indices = data.split_indices(data.splits.train);
    if (train_indices.empty()) throw DataError("run_training: empty train split");

    const long long micro_per_epoch =
        (static_cast<long long>(train_indices.size()) + cfg.batch_size - 1) / cfg.batch_size;

    LrSchedule sched;
    sched.base_lr = cfg.base_lr;
    sched.finetune_lr = cfg.finetune_lr;
    long long total_steps = 0;
    for (std::size_t i = 0; i < cfg.phases.size(); ++i) {
        const auto& phase = cfg.phases[i];
        const long long steps_per_epoch =
            (micro_per_epoch + phase.grad_accum - 1) / phase.grad_accum;
        const long long phase_steps = steps_per_epoch * phase.epochs;
        if (phase.name == "warmup") sched.warmup_steps += phase_steps;
        if (phase.name == "main") sched.main_steps += phase_steps;
        total_steps += phase_steps;
    }

    TrainResult result;
    bool first_logged = false;
    int global_epoch = state.epochs_done;
    bool stop = false;

    for (std::size_t phase_idx = static_cast<std::size_t>(state.phase_index);
         phase_idx < cfg.phases.size() && !stop; ++phase_idx) {
        const PhaseSpec& phase = cfg.phases[phase_idx];
        state.phase_index = static_cast<int>(phase_idx);

        for (int epoch = 0; epoch < phase.epochs && !stop; ++epoch, ++global_epoch) {
            // deterministic per-epoch shuffle
            auto order = train_indices;
            Rng shuffle_rng(mix(cfg.seed, 0xE90000 + global_epoch));
            for (std::size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[shuffle_rng.uniform_int(static_cast<int>(i))]);

            std::vector<std::vector<SampleRef>> micros;
            for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
                std::vector<SampleRef> micro;
                for (std::size_t k = start;
                     k < std::min(order.size(), start + cfg.batch_size); ++k) {
                    SampleRef ref;
                    ref.sample = &data.samples[order[k]];
                    ref.augment_seed = mix(cfg.seed, 0xA0000000ULL + global_epoch * 100003ULL +
                                                         order[k]);
                    micro.push_back(ref);
                }
                micros.push_back(std::move(micro));
            }

            for (std::size_t g = 0; g < micros.size() && !stop; g += phase.grad_accum) {
                StepContext ctx;
                ctx.cfg = &cfg;
                ctx.active = phase.losses;
                for (std::size_t k = g;
                     k < std::min(micros.size(), g + static_cast<std::size_t>(phase.grad_accum));
                     ++k)
                    ctx.micro_batches.push_back(micros[k]);
                ctx.lr = lr_at(state.step, total_steps, sched);

                LossReport report = train_step(state, opt, ctx);
                if (!first_logged) {
                    result.first_report = report;
                    first_logged = true;
                }
                result.last_report = report;
                if (callbacks.on_step)
                    callbacks.on_step(state.step, phase.name, report, ctx.lr);
                if (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 &&
                    save_cb)
                    save_cb("step" + std::to_string(state.step));
                if (cfg.max_steps > 0 && state.step >= cfg.max_steps) stop = true;
            }
            state.epochs_done = global_epoch + 1;
        }
        if (save_cb) save_cb("phase" + std::to_string(phase_idx) + "_" + phase.name);
        state.phase_index = static_cast<int>(phase_idx) + 1;
    }

    result.final_step = state.step;
    return result;
}

}  // namespace defend
