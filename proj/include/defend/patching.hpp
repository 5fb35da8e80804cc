#pragma once

#include <vector>

#include "defend/image.hpp"

namespace defend {

struct Patch {
    int size = 0;                 // side length s_p
    std::vector<double> pixels;   // s_p * s_p * 3, interleaved, values in [0,1]
    int grid_row = 0;
    int grid_col = 0;
    int flat_index = 0;           // grid_row * (W / s_p) + grid_col

    double at(int r, int c, int ch) const {
        return pixels[(static_cast<std::size_t>(r) * size + c) * 3 + ch];
    }
    double& at(int r, int c, int ch) {
        return pixels[(static_cast<std::size_t>(r) * size + c) * 3 + ch];
    }
};

struct SaliencyScore {
    double edge = 0.0;
    double text = 0.0;
    double contrast = 0.0;
    double total = 0.0;
};

struct SamplerConfig {
    double lambda_threshold = 0.3;
    double alpha = 0.4;  // edge weight
    double beta = 0.4;   // text weight
    double gamma = 0.2;  // contrast weight
    double min_retention_fraction = 0.25;

    void validate() const {
        if (lambda_threshold < 0.0 || lambda_threshold > 1.0)
            throw ConfigError("sampler: lambda must be in [0,1]");
        if (min_retention_fraction <= 0.0 || min_retention_fraction > 1.0)
            throw ConfigError("sampler: min_retention_fraction must be in (0,1]");
        if (std::abs(alpha + beta + gamma - 1.0) > 1e-9)
            throw ConfigError("sampler: alpha + beta + gamma must equal 1");
    }
};

// Tiles the image into non-overlapping s_p x s_p patches in row-major grid
// order. Dimensions must divide exactly; no implicit resizing.
std::vector<Patch> patchify(const Image& image, int patch_size);

// Reassembles patches by grid index into the original image (test helper).
Image reassemble(const std::vector<Patch>& patches, int height, int width);

// Sobel responses of the grayscale patch, edge-replicated at the borders.
// gx/gy are filled with s_p*s_p raw kernel outputs.
void sobel_responses(const Patch& patch, std::vector<double>& gx, std::vector<double>& gy);

// neighbors: the (up to 8) grid-adjacent patches
SaliencyScore saliency_score(const Patch& patch, const std::vector<Patch>& neighbors,
                             const SamplerConfig& cfg);

std::vector<SaliencyScore> score_all_patches(const std::vector<Patch>& patches,
                                             int grid_rows, int grid_cols,
                                             const SamplerConfig& cfg);

// Indices with total > lambda, in ascending flat_index order. When fewer
// than ceil(min_retention_fraction * N_P) qualify, the top-scoring that
// many are retained instead (ties broken by lower flat_index).
std::vector<int> adaptive_sample(const std::vector<Patch>& patches,
                                 const std::vector<SaliencyScore>& scores,
                                 const SamplerConfig& cfg);

}  // namespace defend
