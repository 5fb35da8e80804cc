#include "defend/patching.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace defend {

std::vector<Patch> patchify(const Image& image, int patch_size) {
    if (patch_size <= 0) throw ContractError("patchify: patch size must be positive");
    if (image.height % patch_size != 0 || image.width % patch_size != 0)
        throw ContractError("patchify: image " + std::to_string(image.height) + "x" +
                            std::to_string(image.width) + " not divisible by patch size " +
                            std::to_string(patch_size));
    const int grid_rows = image.height / patch_size;
    const int grid_cols = image.width / patch_size;
    std::vector<Patch> patches;
    patches.reserve(static_cast<std::size_t>(grid_rows) * grid_cols);
    for (int gr = 0; gr < grid_rows; ++gr) {
        for (int gc = 0; gc < grid_cols; ++gc) {
            Patch p;
            p.size = patch_size;
            p.grid_row = gr;
            p.grid_col = gc;
            p.flat_index = gr * grid_cols + gc;
            p.pixels.resize(static_cast<std::size_t>(patch_size) * patch_size * 3);
            for (int r = 0; r < patch_size; ++r)
                for (int c = 0; c < patch_size; ++c)
                    for (int ch = 0; ch < 3; ++ch)
                        p.at(r, c, ch) = image.at(gr * patch_size + r, gc * patch_size + c, ch);
            patches.push_back(std::move(p));
        }
    }
    return patches;
}

Image reassemble(const std::vector<Patch>& patches, int height, int width) {
    Image out(height, width);
    for (const auto& p : patches) {
        for (int r = 0; r < p.size; ++r)
            for (int c = 0; c < p.size; ++c)
                for (int ch = 0; ch < 3; ++ch)
                    out.at(p.grid_row * p.size + r, p.grid_col * p.size + c, ch) =
                        p.at(r, c, ch);
    }
    return out;
}

void sobel_responses(const Patch& patch, std::vector<double>& gx, std::vector<double>& gy) {
    const int n = patch.size;
    std::vector<double> gray(static_cast<std::size_t>(n) * n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c)
            gray[static_cast<std::size_t>(r) * n + c] =
                luminance(patch.at(r, c, 0), patch.at(r, c, 1), patch.at(r, c, 2));

    gx.assign(static_cast<std::size_t>(n) * n, 0.0);
    gy.assign(static_cast<std::size_t>(n) * n, 0.0);
    auto g = [&](int r, int c) {
        r = std::clamp(r, 0, n - 1);
        c = std::clamp(c, 0, n - 1);
        return gray[static_cast<std::size_t>(r) * n + c];
    };
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            const double tl = g(r - 1, c - 1), tm = g(r - 1, c), tr = g(r - 1, c + 1);
            const double ml = g(r, c - 1), mr = g(r, c + 1);
            const double bl = g(r + 1, c - 1), bm = g(r + 1, c), br = g(r + 1, c + 1);
            gx[static_cast<std::size_t>(r) * n + c] = (tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl);
            gy[static_cast<std::size_t>(r) * n + c] = (bl + 2.0 * bm + br) - (tl + 2.0 * tm + tr);
        }
    }
}

SaliencyScore saliency_score(const Patch& patch, const std::vector<Patch>& neighbors,
                             const SamplerConfig& cfg) {
    SaliencyScore s;
    std::vector<double> gx, gy;
    sobel_responses(patch, gx, gy);

    // edge: mean gradient magnitude over the max possible response 4*sqrt(2)
    const double max_mag = 4.0 * std::sqrt(2.0);
    double mag_sum = 0.0;
    double max_abs_gx = 0.0;
    for (std::size_t i = 0; i < gx.size(); ++i) {
        mag_sum += std::sqrt(gx[i] * gx[i] + gy[i] * gy[i]);
        max_abs_gx = std::max(max_abs_gx, std::abs(gx[i]));
    }
    s.edge = std::clamp(mag_sum / (gx.size() * max_mag), 0.0, 1.0);

    // text proxy: fraction of pixels whose horizontal Sobel response exceeds
    // half the patch maximum (dense vertical strokes read as text-like)
    if (max_abs_gx > 1e-12) {
        int count = 0;
        for (double v : gx)
            if (std::abs(v) > 0.5 * max_abs_gx) ++count;
        s.text = std::clamp(static_cast<double>(count) / gx.size(), 0.0, 1.0);
    }

    // contrast: |mean luminance - mean over neighbor patches|
    if (!neighbors.empty()) {
        auto mean_luma = [](const Patch& p) {
            double sum = 0.0;
            for (int r = 0; r < p.size; ++r)
                for (int c = 0; c < p.size; ++c)
                    sum += luminance(p.at(r, c, 0), p.at(r, c, 1), p.at(r, c, 2));
            return sum / (p.size * p.size);
        };
        double nb = 0.0;
        for (const auto& n : neighbors) nb += mean_luma(n);
        nb /= neighbors.size();
        s.contrast = std::clamp(std::abs(mean_luma(patch) - nb), 0.0, 1.0);
    }

    s.total = cfg.alpha * s.edge + cfg.beta * s.text + cfg.gamma * s.contrast;
    return s;
}

std::vector<SaliencyScore> score_all_patches(const std::vector<Patch>& patches,
                                             int grid_rows, int grid_cols,
                                             const SamplerConfig& cfg) {
    if (static_cast<std::size_t>(grid_rows) * grid_cols != patches.size())
        throw ContractError("score_all_patches: grid size mismatch");
    std::vector<SaliencyScore> scores(patches.size());
    for (int gr = 0; gr < grid_rows; ++gr) {
        for (int gc = 0; gc < grid_cols; ++gc) {
            std::vector<Patch> neighbors;
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    const int nr = gr + dr, nc = gc + dc;
                    if (nr < 0 || nr >= grid_rows || nc < 0 || nc >= grid_cols) continue;
                    neighbors.push_back(patches[static_cast<std::size_t>(nr) * grid_cols + nc]);
                }
            scores[static_cast<std::size_t>(gr) * grid_cols + gc] =
                saliency_score(patches[static_cast<std::size_t>(gr) * grid_cols + gc],
                               neighbors, cfg);
        }
    }
    return scores;
}

std::vector<int> adaptive_sample(const std::vector<Patch>& patches,
                                 const std::vector<SaliencyScore>& scores,
                                 const SamplerConfig& cfg) {
    if (patches.size() != scores.size())
        throw ContractError("adaptive_sample: patches/scores length mismatch");
    cfg.validate();

    // list positions, ordered by ascending flat_index on return
    std::vector<int> retained;
    for (std::size_t i = 0; i < patches.size(); ++i)
        if (scores[i].total > cfg.lambda_threshold)
            retained.push_back(static_cast<int>(i));

    const int floor_count = static_cast<int>(
        std::ceil(cfg.min_retention_fraction * static_cast<double>(patches.size())));
    if (static_cast<int>(retained.size()) < floor_count) {
        std::vector<int> idx(patches.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
            if (scores[a].total != scores[b].total)
                return scores[a].total > scores[b].total;
            return patches[a].flat_index < patches[b].flat_index;
        });
        retained.assign(idx.begin(), idx.begin() + std::min<std::size_t>(
                                                       floor_count, idx.size()));
    }
    std::sort(retained.begin(), retained.end(), [&](int a, int b) {
        return patches[a].flat_index < patches[b].flat_index;
    });
    return retained;
}

}  // namespace defend
