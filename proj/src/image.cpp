#include "defend/image.hpp"

#include <algorithm>
#include <cmath>

namespace defend {

void Image::clamp01() {
    for (auto& v : pixels) v = std::clamp(v, 0.0, 1.0);
}

double luminance(double r, double g, double b) {
    return 0.299 * r + 0.587 * g + 0.114 * b;
}

void bilinear_sample(const Image& img, double y, double x, double out[3]) {
    y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
    x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const int y1 = std::min(y0 + 1, img.height - 1);
    const int x1 = std::min(x0 + 1, img.width - 1);
    const double fy = y - y0;
    const double fx = x - x0;
    for (int ch = 0; ch < 3; ++ch) {
        const double top = img.at(y0, x0, ch) * (1.0 - fx) + img.at(y0, x1, ch) * fx;
        const double bot = img.at(y1, x0, ch) * (1.0 - fx) + img.at(y1, x1, ch) * fx;
        out[ch] = top * (1.0 - fy) + bot * fy;
    }
}

Image rotate_about_center(const Image& img, double degrees) {
    if (degrees == 0.0) return img;
    const double rad = degrees * 3.14159265358979323846 / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const double cy = (img.height - 1) / 2.0;
    const double cx = (img.width - 1) / 2.0;
    Image out(img.height, img.width);
    double px[3];
    for (int r = 0; r < img.height; ++r) {
        for (int col = 0; col < img.width; ++col) {
            // inverse mapping: rotate destination coords back into the source
            const double dy = r - cy, dx = col - cx;
            const double sy = cy + dy * c - dx * s;
            const double sx = cx + dy * s + dx * c;
            bilinear_sample(img, sy, sx, px);
            out.set(r, col, px[0], px[1], px[2]);
        }
    }
    return out;
}

Image crop_resize(const Image& img, int top, int left, int crop_h, int crop_w) {
    if (top == 0 && left == 0 && crop_h == img.height && crop_w == img.width) return img;
    Image out(img.height, img.width);
    double px[3];
    for (int r = 0; r < img.height; ++r) {
        for (int col = 0; col < img.width; ++col) {
            const double sy = top + (crop_h - 1) * (img.height > 1 ? r / static_cast<double>(img.height - 1) : 0.0);
            const double sx = left + (crop_w - 1) * (img.width > 1 ? col / static_cast<double>(img.width - 1) : 0.0);
            bilinear_sample(img, sy, sx, px);
            out.set(r, col, px[0], px[1], px[2]);
        }
    }
    return out;
}

Image horizontal_flip(const Image& img) {
    Image out(img.height, img.width);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
            for (int ch = 0; ch < 3; ++ch)
                out.at(r, c, ch) = img.at(r, img.width - 1 - c, ch);
    return out;
}

}  // namespace defend
