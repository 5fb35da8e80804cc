#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "defend/common.hpp"

namespace defend {

// HxWx3 image, channels interleaved, values in [0, 1]
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;  // h * w * 3

    Image() = default;
    Image(int h, int w, double fill = 0.0)
        : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

    double& at(int r, int c, int ch) {
        return pixels[(static_cast<std::size_t>(r) * width + c) * 3 + ch];
    }
    double at(int r, int c, int ch) const {
        return pixels[(static_cast<std::size_t>(r) * width + c) * 3 + ch];
    }
    void set(int r, int c, double red, double green, double blue) {
        at(r, c, 0) = red;
        at(r, c, 1) = green;
        at(r, c, 2) = blue;
    }
    void clamp01();
};

double luminance(double r, double g, double b);

// bilinear sample with coordinates clamped to the image border
void bilinear_sample(const Image& img, double y, double x, double out[3]);

Image rotate_about_center(const Image& img, double degrees);
Image crop_resize(const Image& img, int top, int left, int crop_h, int crop_w);
Image horizontal_flip(const Image& img);

}  // namespace defend
