#include "defend/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "defend/png_io.hpp"

namespace fs = std::filesystem;

namespace defend {

namespace {

struct ClassStyle {
    const char* sub_category;
    const char* category;
    const char* shape;       // drawing archetype key
    const char* shape_word;  // two-word phrase used in descriptions
    const char* color_word;
    double fill[3];          // foreground color
    const char* band_pos;    // top | middle | bottom
};

// Canonical class order. The tail entries are the zero-shot holdouts, so
// late classes should share descriptive vocabulary with earlier ones
// (e.g. "tobacco") to give the zero-shot protocol a foothold.
const ClassStyle kStyles[] = {
    {"Cigarettes", "Combustible", "sticks", "stick bundle", "white",
     {0.95, 0.94, 0.90}, "top"},
    {"E-cigarettes", "Non-Combustible", "slim", "slim device", "slate",
     {0.35, 0.40, 0.55}, "top"},
    {"Patches", "Nicotine Replacement", "square", "square patch", "beige",
     {0.85, 0.75, 0.62}, "top"},
    {"Pipe Tobacco", "Combustible", "circle", "storage tin", "brown",
     {0.52, 0.34, 0.16}, "middle"},
    {"Gums", "Nicotine Replacement", "pellets", "pellet pack", "white",
     {0.92, 0.92, 0.88}, "bottom"},
    {"Smokeless Tobacco", "Non-Combustible", "circle", "round tin", "brown",
     {0.55, 0.38, 0.20}, "bottom"},
    {"Cigars", "Combustible", "cylinder", "thick cylinder", "dark brown",
     {0.40, 0.25, 0.12}, "bottom"},
    {"Heated Tobacco", "Non-Combustible", "rounded", "rounded device", "tan brown",
     {0.60, 0.42, 0.22}, "middle"},
    {"Hookah", "Combustible", "diamond", "tall vessel", "purple",
     {0.45, 0.30, 0.50}, "middle"},
    {"Lozenges", "Nicotine Replacement", "hexes", "drop cluster", "pale green",
     {0.75, 0.90, 0.80}, "middle"},
};

const ClassStyle& style_of(const std::string& sub) {
    for (const auto& s : kStyles)
        if (sub == s.sub_category) return s;
    throw DataError("unknown sub-category: " + sub);
}

struct CategoryStyle {
    double base[3];
    int motif;  // 0 stripes, 1 checker, 2 dots
};

CategoryStyle category_style(const std::string& category) {
    if (category == "Combustible") return {{0.82, 0.72, 0.60}, 0};
    if (category == "Non-Combustible") return {{0.62, 0.70, 0.80}, 1};
    if (category == "Nicotine Replacement") return {{0.66, 0.80, 0.72}, 2};
    throw DataError("unknown category: " + category);
}

uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b) {
    uint64_t x = seed + 0x9E3779B97F4A7C15ULL * (a + 1) + 0xBF58476D1CE4E5B9ULL * (b + 1);
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
}

void fill_rect(Image& img, int top, int left, int h, int w, const double rgb[3]) {
    for (int r = std::max(0, top); r < std::min(img.height, top + h); ++r)
        for (int c = std::max(0, left); c < std::min(img.width, left + w); ++c)
            img.set(r, c, rgb[0], rgb[1], rgb[2]);
}

void fill_circle(Image& img, double cy, double cx, double radius, const double rgb[3]) {
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            const double dy = r - cy, dx = c - cx;
            if (dy * dy + dx * dx <= radius * radius) img.set(r, c, rgb[0], rgb[1], rgb[2]);
        }
}

void fill_diamond(Image& img, double cy, double cx, double ry, double rx,
                  const double rgb[3]) {
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
            if (std::abs(r - cy) / ry + std::abs(c - cx) / rx <= 1.0)
                img.set(r, c, rgb[0], rgb[1], rgb[2]);
}

void draw_background(Image& img, const CategoryStyle& cat, Rng& rng) {
    const int n = img.height;
    const int phase = rng.uniform_int(8);
    for (int r = 0; r < n; ++r) {
        const double grad = 0.06 * (r / static_cast<double>(n - 1) - 0.5);
        for (int c = 0; c < img.width; ++c) {
            double shade = 0.0;
            switch (cat.motif) {
                case 0:  // diagonal stripes
                    shade = (((r + c + phase) / 4) % 2 == 0) ? 0.0 : -0.12;
                    break;
                case 1:  // checker
                    shade = (((r / 6) + (c / 6)) % 2 == 0) ? 0.0 : -0.10;
                    break;
                case 2:  // dots
                    shade = ((r % 8 < 3) && ((c + phase) % 8 < 3)) ? -0.12 : 0.0;
                    break;
            }
            img.set(r, c, cat.base[0] + grad + shade, cat.base[1] + grad + shade,
                    cat.base[2] + grad + shade);
        }
    }
}

// Pulls the per-image mean color toward a shared target so mean color
// alone cannot identify the class; a small class offset keeps the
// nearest-centroid baseline above chance without trivializing it.
void normalize_mean_color(Image& img, int class_id, Rng& rng) {
    double mean[3] = {0.0, 0.0, 0.0};
    const std::size_t n = img.pixels.size() / 3;
    for (std::size_t i = 0; i < n; ++i)
        for (int ch = 0; ch < 3; ++ch) mean[ch] += img.pixels[i * 3 + ch];
    for (int ch = 0; ch < 3; ++ch) mean[ch] /= static_cast<double>(n);
    for (int ch = 0; ch < 3; ++ch) {
        const double class_off = 0.012 * (((class_id * 37 + ch * 11) % 7) - 3) / 3.0;
        const double jitter = rng.uniform(-0.015, 0.015);
        const double shift = 0.55 + class_off + jitter - mean[ch];
        for (std::size_t i = 0; i < n; ++i) img.pixels[i * 3 + ch] += shift;
    }
}

// Stroke texture over most 16px cells, drawn over background and shape
// alike. The 4-column cycle puts a luminance transition at every column,
// which is what the sampler's text proxy keys on. A few calm cells stay
// smooth so the retained fraction lands in the sampler's expected regime.
void overlay_stroke_texture(Image& img, Rng& rng) {
    const int n = img.height;
    const int cell = 16;
    for (int cr = 0; cr < n; cr += cell)
        for (int cc = 0; cc < img.width; cc += cell) {
            const bool textured = rng.uniform() < 0.88;
            const int stroke_phase = rng.uniform_int(4);
            if (!textured) continue;
            for (int r = cr; r < std::min(n, cr + cell); ++r)
                for (int c = cc; c < std::min(img.width, cc + cell); ++c) {
                    const double amp = ((c + stroke_phase) % 4 < 2) ? 0.14 : -0.14;
                    for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) += amp;
                }
        }
    for (auto& v : img.pixels) v += rng.uniform(-0.02, 0.02);
}

void draw_warning_band(Image& img, const char* pos, Rng& rng) {
    const int n = img.height;
    const int band_h = n / 5;
    int top;
    if (std::string(pos) == "top")
        top = n / 10;
    else if (std::string(pos) == "middle")
        top = (n - band_h) / 2;
    else
        top = n - band_h - n / 10;
    top += rng.uniform_int(7) - 3;
    top = std::clamp(top, 0, n - band_h);

    // thin dark frame, then moderate-contrast strokes on a 4-column cycle:
    // every interior column carries a transition without one huge edge
    // dominating the per-patch maximum
    const double frame[3] = {0.18, 0.18, 0.20};
    fill_rect(img, top, 2, 1, img.width - 4, frame);
    fill_rect(img, top + band_h - 1, 2, 1, img.width - 4, frame);
    const int phase = rng.uniform_int(4);
    for (int r = top + 1; r < top + band_h - 1; ++r)
        for (int c = 2; c < img.width - 2; ++c) {
            const double v = ((c + phase) % 4 < 2) ? 0.66 : 0.26;
            img.set(r, c, v + 0.03, v, v - 0.03);
        }
}

void draw_shape(Image& img, const ClassStyle& st, Rng& rng) {
    const int n = img.height;
    const double scale = rng.uniform(0.85, 1.15);
    const double cy = n / 2.0 + rng.uniform(-4.0, 4.0);
    const double cx = n / 2.0 + rng.uniform(-4.0, 4.0);
    double fill[3] = {st.fill[0] + rng.uniform(-0.05, 0.05),
                      st.fill[1] + rng.uniform(-0.05, 0.05),
                      st.fill[2] + rng.uniform(-0.05, 0.05)};
    const double outline[3] = {fill[0] * 0.45, fill[1] * 0.45, fill[2] * 0.45};
    const std::string shape = st.shape;

    if (shape == "sticks") {
        const int count = 4;
        const int stick_w = std::max(2, static_cast<int>(3 * scale));
        const int h = static_cast<int>(n * 0.55 * scale);
        const double tip[3] = {0.85, 0.55, 0.25};
        for (int i = 0; i < count; ++i) {
            const int left = static_cast<int>(cx) - count * stick_w + i * 2 * stick_w;
            fill_rect(img, static_cast<int>(cy) - h / 2, left, h, stick_w, fill);
            fill_rect(img, static_cast<int>(cy) - h / 2, left, h / 5, stick_w, tip);
        }
    } else if (shape == "slim") {
        const int w = std::max(3, static_cast<int>(5 * scale));
        const int h = static_cast<int>(n * 0.6 * scale);
        fill_rect(img, static_cast<int>(cy) - h / 2, static_cast<int>(cx) - w / 2, h, w, fill);
        fill_rect(img, static_cast<int>(cy) - h / 2, static_cast<int>(cx) - w / 2, 3, w, outline);
    } else if (shape == "square") {
        const int half = static_cast<int>(n * 0.22 * scale);
        fill_rect(img, static_cast<int>(cy) - half, static_cast<int>(cx) - half, 2 * half,
                  2 * half, fill);
        fill_rect(img, static_cast<int>(cy) - half, static_cast<int>(cx) - half, 2, 2 * half,
                  outline);
        fill_rect(img, static_cast<int>(cy) + half - 2, static_cast<int>(cx) - half, 2,
                  2 * half, outline);
    } else if (shape == "circle") {
        const double rad = n * 0.24 * scale;
        fill_circle(img, cy, cx, rad, outline);
        fill_circle(img, cy, cx, rad - 2.0, fill);
    } else if (shape == "pellets") {
        const int pw = std::max(3, static_cast<int>(4 * scale));
        for (int i = -1; i <= 1; ++i)
            for (int j = -2; j <= 2; ++j)
                fill_rect(img, static_cast<int>(cy) + i * (pw + 2) - pw / 2,
                          static_cast<int>(cx) + j * (pw + 2) - pw / 2, pw, pw, fill);
    } else if (shape == "cylinder") {
        const int h = std::max(6, static_cast<int>(10 * scale));
        const int w = static_cast<int>(n * 0.6 * scale);
        fill_rect(img, static_cast<int>(cy) - h / 2, static_cast<int>(cx) - w / 2, h, w, fill);
        fill_circle(img, cy, cx - w / 2.0, h / 2.0, fill);
        fill_circle(img, cy, cx + w / 2.0, h / 2.0, outline);
    } else if (shape == "rounded") {
        const int w = std::max(5, static_cast<int>(8 * scale));
        const int h = static_cast<int>(n * 0.55 * scale);
        fill_rect(img, static_cast<int>(cy) - h / 2, static_cast<int>(cx) - w / 2, h, w, fill);
        fill_circle(img, cy - h / 2.0, cx, w / 2.0, fill);
        fill_circle(img, cy + h / 2.0, cx, w / 2.0, fill);
        fill_rect(img, static_cast<int>(cy) - h / 6, static_cast<int>(cx) - w / 2, 2, w,
                  outline);
    } else if (shape == "diamond") {
        fill_diamond(img, cy, cx, n * 0.32 * scale, n * 0.18 * scale, fill);
        fill_diamond(img, cy - n * 0.2 * scale, cx, n * 0.08 * scale, n * 0.08 * scale,
                     outline);
    } else if (shape == "hexes") {
        for (int i = 0; i < 3; ++i) {
            const double hx = cx + (i - 1) * n * 0.18 * scale;
            const double hy = cy + ((i % 2 == 0) ? -1 : 1) * n * 0.08;
            fill_diamond(img, hy, hx, n * 0.1 * scale, n * 0.1 * scale, fill);
        }
    }
}

struct ClassContent {
    std::string severity_level, severity_impact;
    std::string duration_type;
    std::string setting;
    std::string env_type, env_desc;
};

ClassContent class_content(const ClassStyle& st, int class_id) {
    ClassContent c;
    const std::string cat = st.category;
    if (cat == "Combustible") {
        c.severity_level = "High";
        c.severity_impact = "lung cancer";
        c.duration_type = "Long-term";
        c.env_type = "Solid Waste";
        c.env_desc = "smoke emissions and discarded packaging";
    } else if (cat == "Non-Combustible") {
        c.severity_level = "Medium";
        c.severity_impact = "respiratory issues";
        c.duration_type = "Long-term";
        c.env_type = "Electronic Waste";
        c.env_desc = "battery and cartridge disposal";
    } else {
        c.severity_level = "Low";
        c.severity_impact = "temporary effects";
        c.duration_type = "Short-term";
        c.env_type = "Solid Waste";
        c.env_desc = "packaging materials";
    }
    const char* settings[] = {"private spaces", "social settings", "public spaces"};
    c.setting = settings[class_id % 3];
    return c;
}

std::string build_description(const ClassStyle& st, const ClassContent& content) {
    std::ostringstream os;
    os << "a photo of a " << st.sub_category << " product . a " << st.color_word << " "
       << st.shape_word << " with a warning band near the " << st.band_pos
       << " . severity " << content.severity_level << " " << content.severity_impact
       << " . seen in " << content.setting;
    return os.str();
}

AnnotationRecord build_record(const ClassStyle& st, const ClassContent& content,
                              const std::string& image_id, const std::string& description) {
    AnnotationRecord rec;
    rec.query = description;
    rec.image_url = "file://images/" + image_id + ".png";
    rec.image_id = image_id;
    rec.category = st.category;
    rec.sub_category = st.sub_category;
    rec.health_impact_labels = Json{
        {"severity", Json::array({Json{{"level", content.severity_level},
                                       {"impact", content.severity_impact},
                                       {"visual_cues", Json::array({"warning band"})}}})},
        {"duration", Json::array({Json{{"type", content.duration_type},
                                       {"effects", Json::array({content.severity_impact})},
                                       {"visual_indicators", Json::array({"warning text"})}}})}};
    rec.usage_context = Json{
        {"settings", Json::array({Json{{"type", content.setting},
                                       {"visual_cues", Json::array({"product scene"})}}})},
        {"regulatory_zones",
         Json::array({Json{{"type", "age restricted"},
                           {"visual_cues", Json::array({"age notice"})}}})}};
    rec.content_purpose = Json{
        {"marketing", Json::array({Json{{"type", "product presentation"},
                                        {"visual_elements",
                                         Json::array({st.shape_word})}}})},
        {"regulatory", Json::array({Json{{"type", "warning labels"},
                                         {"visual_elements",
                                          Json::array({"health warnings"})}}})}};
    rec.environmental_impact =
        Json{{"type", content.env_type},
             {"description", content.env_desc},
             {"visual_indicators", Json{{"litter", Json::array({"discarded packaging"})},
                                        {"pollution", Json::array({content.env_desc})}}}};
    return rec;
}

}  // namespace

const std::vector<std::string>& category_names() {
    static const std::vector<std::string> names = {"Combustible", "Non-Combustible",
                                                   "Nicotine Replacement"};
    return names;
}

const std::vector<std::string>& sub_categories_of(const std::string& category) {
    static const std::map<std::string, std::vector<std::string>> table = {
        {"Combustible", {"Cigarettes", "Cigars", "Pipe Tobacco", "Hookah"}},
        {"Non-Combustible", {"E-cigarettes", "Smokeless Tobacco", "Heated Tobacco"}},
        {"Nicotine Replacement", {"Patches", "Gums", "Lozenges"}},
    };
    auto it = table.find(category);
    if (it == table.end()) throw DataError("unknown category: " + category);
    return it->second;
}

const std::vector<std::string>& canonical_class_order() {
    static const std::vector<std::string> order = [] {
        std::vector<std::string> o;
        for (const auto& s : kStyles) o.push_back(s.sub_category);
        return o;
    }();
    return order;
}

Json AnnotationRecord::to_json() const {
    Json j;
    j["query"] = query;
    j["imageUrl"] = image_url;
    j["image_id"] = image_id;
    j["category"] = category;
    j["sub-category"] = sub_category;
    j["health_impact_labels"] = health_impact_labels;
    j["usage_context"] = usage_context;
    j["content_purpose"] = content_purpose;
    j["environmental_impact"] = environmental_impact;
    return j;
}

std::vector<std::string> validate_record(const Json& obj) {
    std::vector<std::string> errors;
    if (!obj.is_object()) {
        errors.push_back("record is not a JSON object");
        return errors;
    }
    auto need_string = [&](const char* key) {
        if (!obj.contains(key))
            errors.push_back(std::string("missing field: ") + key);
        else if (!obj[key].is_string())
            errors.push_back(std::string("field has wrong type (expected string): ") + key);
    };
    need_string("query");
    need_string("image_id");
    need_string("category");
    need_string("sub-category");

    if (obj.contains("category") && obj["category"].is_string()) {
        const std::string cat = obj["category"].get<std::string>();
        const auto& cats = category_names();
        if (std::find(cats.begin(), cats.end(), cat) == cats.end()) {
            std::string allowed;
            for (const auto& c : cats) allowed += (allowed.empty() ? "" : ", ") + c;
            errors.push_back("category '" + cat + "' not in allowed set {" + allowed + "}");
        } else if (obj.contains("sub-category") && obj["sub-category"].is_string()) {
            const std::string sub = obj["sub-category"].get<std::string>();
            const auto& subs = sub_categories_of(cat);
            if (std::find(subs.begin(), subs.end(), sub) == subs.end()) {
                std::string allowed;
                for (const auto& s : subs) allowed += (allowed.empty() ? "" : ", ") + s;
                errors.push_back("sub-category '" + sub + "' not valid for category '" +
                                 cat + "' (allowed: " + allowed + ")");
            }
        }
    }

    auto need_list_block = [&](const char* block, const std::vector<const char*>& keys) {
        if (!obj.contains(block)) {
            errors.push_back(std::string("missing field: ") + block);
            return;
        }
        if (!obj[block].is_object()) {
            errors.push_back(std::string("field has wrong type (expected object): ") + block);
            return;
        }
        for (const char* key : keys) {
            if (!obj[block].contains(key))
                errors.push_back(std::string("missing field: ") + block + "." + key);
            else if (!obj[block][key].is_array())
                errors.push_back(std::string("field has wrong type (expected list): ") +
                                 block + "." + key);
        }
    };
    need_list_block("health_impact_labels", {"severity", "duration"});
    need_list_block("usage_context", {"settings", "regulatory_zones"});
    need_list_block("content_purpose", {"marketing", "regulatory"});

    if (!obj.contains("environmental_impact"))
        errors.push_back("missing field: environmental_impact");
    else if (!obj["environmental_impact"].is_object())
        errors.push_back("field has wrong type (expected object): environmental_impact");

    return errors;
}

AnnotationRecord record_from_json(const Json& obj) {
    auto errors = validate_record(obj);
    if (!errors.empty()) {
        std::string msg = "invalid record";
        for (const auto& e : errors) msg += "; " + e;
        throw DataError(msg);
    }
    AnnotationRecord rec;
    rec.query = obj["query"].get<std::string>();
    rec.image_url = obj.value("imageUrl", "");
    rec.image_id = obj["image_id"].get<std::string>();
    rec.category = obj["category"].get<std::string>();
    rec.sub_category = obj["sub-category"].get<std::string>();
    rec.health_impact_labels = obj["health_impact_labels"];
    rec.usage_context = obj["usage_context"];
    rec.content_purpose = obj["content_purpose"];
    rec.environmental_impact = obj["environmental_impact"];
    return rec;
}

Json SplitManifest::to_json() const {
    Json j;
    j["train"] = train;
    j["val"] = val;
    j["test"] = test;
    j["zeroshot"] = zeroshot;
    j["zeroshot_classes"] = zeroshot_classes;
    return j;
}

SplitManifest SplitManifest::from_json(const Json& j) {
    SplitManifest m;
    m.train = j.at("train").get<std::vector<std::string>>();
    m.val = j.at("val").get<std::vector<std::string>>();
    m.test = j.at("test").get<std::vector<std::string>>();
    m.zeroshot = j.at("zeroshot").get<std::vector<std::string>>();
    m.zeroshot_classes = j.at("zeroshot_classes").get<std::vector<std::string>>();
    return m;
}

std::string prompt_text_for(const std::string& category, const std::string& sub_category) {
    return "a photo of a " + sub_category + " product from the " + category + " range";
}

SyntheticDataset generate_synthetic_dataset(const GeneratorConfig& cfg) {
    if (cfg.n_classes < 4)
        throw ConfigError("generator: need at least 4 classes");
    if (cfg.n_classes > static_cast<int>(canonical_class_order().size()))
        throw ConfigError("generator: at most " +
                          std::to_string(canonical_class_order().size()) + " classes");
    if (cfg.n_per_class < 1) throw ConfigError("generator: n_per_class must be positive");
    if (cfg.image_size < 16 || cfg.image_size % cfg.patch_size != 0)
        throw ConfigError("generator: image_size must be >= 16 and divisible by patch size");

    SyntheticDataset ds;
    for (int c = 0; c < cfg.n_classes; ++c) ds.class_names.push_back(kStyles[c].sub_category);

    const int n_zeroshot = static_cast<int>(std::ceil(0.1 * cfg.n_classes));
    for (int c = cfg.n_classes - n_zeroshot; c < cfg.n_classes; ++c)
        ds.splits.zeroshot_classes.push_back(kStyles[c].sub_category);

    int serial = 0;
    for (int c = 0; c < cfg.n_classes; ++c) {
        const ClassStyle& st = kStyles[c];
        const ClassContent content = class_content(st, c);
        const bool is_zeroshot = c >= cfg.n_classes - n_zeroshot;

        std::vector<std::string> class_ids;
        for (int i = 0; i < cfg.n_per_class; ++i, ++serial) {
            char id_buf[32];
            std::snprintf(id_buf, sizeof(id_buf), "img_%05d", serial);
            const std::string image_id = id_buf;
            class_ids.push_back(image_id);

            Rng rng(mix_seed(cfg.seed, static_cast<uint64_t>(c), static_cast<uint64_t>(i)));
            Image img(cfg.image_size, cfg.image_size);
            draw_background(img, category_style(st.category), rng);
            draw_shape(img, st, rng);
            overlay_stroke_texture(img, rng);
            draw_warning_band(img, st.band_pos, rng);
            normalize_mean_color(img, c, rng);
            img.clamp01();

            SyntheticSample sample;
            sample.image = std::move(img);
            sample.description_text = build_description(st, content);
            sample.record = build_record(st, content, image_id, sample.description_text);
            sample.prompt_text = prompt_text_for(st.category, st.sub_category);
            sample.class_id = c;
            ds.samples.push_back(std::move(sample));
        }

        if (is_zeroshot) {
            for (auto& id : class_ids) ds.splits.zeroshot.push_back(id);
        } else {
            // deterministic per-class shuffle, then 80/10/10
            Rng shuffle_rng(mix_seed(cfg.seed, 0xABCDEF, static_cast<uint64_t>(c)));
            for (std::size_t i = class_ids.size(); i > 1; --i)
                std::swap(class_ids[i - 1], class_ids[shuffle_rng.uniform_int(static_cast<int>(i))]);
            const int n = static_cast<int>(class_ids.size());
            const int n_val = std::max(1, n / 10);
            const int n_test = std::max(1, n / 10);
            const int n_train = n - n_val - n_test;
            if (n_train < 1) throw ConfigError("generator: n_per_class too small to split");
            for (int i = 0; i < n; ++i) {
                if (i < n_train)
                    ds.splits.train.push_back(class_ids[i]);
                else if (i < n_train + n_val)
                    ds.splits.val.push_back(class_ids[i]);
                else
                    ds.splits.test.push_back(class_ids[i]);
            }
        }
    }
    std::sort(ds.splits.train.begin(), ds.splits.train.end());
    std::sort(ds.splits.val.begin(), ds.splits.val.end());
    std::sort(ds.splits.test.begin(), ds.splits.test.end());
    std::sort(ds.splits.zeroshot.begin(), ds.splits.zeroshot.end());
    return ds;
}

void write_dataset(const std::string& dir, const SyntheticDataset& ds) {
    fs::create_directories(fs::path(dir) / "images");

    std::ofstream jsonl(fs::path(dir) / "dataset.jsonl");
    if (!jsonl) throw DataError("cannot write dataset.jsonl under " + dir);
    for (const auto& s : ds.samples) jsonl << s.record.to_json().dump() << "\n";
    jsonl.close();

    std::ofstream splits(fs::path(dir) / "splits.json");
    if (!splits) throw DataError("cannot write splits.json under " + dir);
    splits << ds.splits.to_json().dump(2) << "\n";
    splits.close();

    for (const auto& s : ds.samples)
        write_png((fs::path(dir) / "images" / (s.record.image_id + ".png")).string(),
                  s.image);
}

const LoadedSample& Dataset::by_id(const std::string& id) const {
    auto it = index_by_id.find(id);
    if (it == index_by_id.end()) throw DataError("unknown image id: " + id);
    return samples[it->second];
}

std::vector<std::size_t> Dataset::split_indices(const std::vector<std::string>& ids) const {
    std::vector<std::size_t> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = index_by_id.find(id);
        if (it == index_by_id.end()) throw DataError("split references unknown id: " + id);
        out.push_back(it->second);
    }
    return out;
}

Dataset load_dataset(const std::string& dir) {
    const fs::path root(dir);
    if (!fs::exists(root / "dataset.jsonl"))
        throw DataError("dataset.jsonl not found under " + dir);
    if (!fs::exists(root / "splits.json"))
        throw DataError("splits.json not found under " + dir);

    Dataset ds;
    {
        std::ifstream in(root / "splits.json");
        Json j = Json::parse(in, nullptr, true);
        ds.splits = SplitManifest::from_json(j);
    }

    std::ifstream in(root / "dataset.jsonl");
    std::string line;
    std::vector<std::string> corpus;
    std::map<std::string, int> class_ids;  // assigned after collection
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        Json j = Json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw DataError("dataset.jsonl line " + std::to_string(line_no) +
                            ": malformed JSON");
        auto errors = validate_record(j);
        if (!errors.empty())
            throw DataError("dataset.jsonl line " + std::to_string(line_no) + ": " +
                            errors.front());
        LoadedSample s;
        s.record = record_from_json(j);
        s.image_id = s.record.image_id;
        s.description_text = s.record.query;
        s.prompt_text = prompt_text_for(s.record.category, s.record.sub_category);
        s.image = read_png((root / "images" / (s.image_id + ".png")).string());
        corpus.push_back(s.description_text);
        corpus.push_back(s.prompt_text);
        ds.index_by_id[s.image_id] = ds.samples.size();
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty()) throw DataError("dataset.jsonl is empty");

    // class ids follow the canonical order restricted to present classes
    for (const auto& name : canonical_class_order()) {
        for (const auto& s : ds.samples) {
            if (s.record.sub_category == name && !class_ids.count(name)) {
                class_ids[name] = static_cast<int>(ds.class_names.size());
                ds.class_names.push_back(name);
            }
        }
    }
    for (auto& s : ds.samples) s.class_id = class_ids.at(s.record.sub_category);

    ds.vocab = Vocab::build(corpus);
    ds.image_size = ds.samples.front().image.height;
    return ds;
}

double pixel_mean_centroid_accuracy(const Dataset& ds,
                                    const std::vector<std::string>& train_ids,
                                    const std::vector<std::string>& eval_ids) {
    const int n_classes = static_cast<int>(ds.class_names.size());
    std::vector<std::array<double, 3>> centroids(n_classes, {0.0, 0.0, 0.0});
    std::vector<int> counts(n_classes, 0);

    auto mean_color = [](const Image& img) {
        std::array<double, 3> m{0.0, 0.0, 0.0};
        const std::size_t n = img.pixels.size() / 3;
        for (std::size_t i = 0; i < n; ++i)
            for (int ch = 0; ch < 3; ++ch) m[ch] += img.pixels[i * 3 + ch];
        for (int ch = 0; ch < 3; ++ch) m[ch] /= static_cast<double>(n);
        return m;
    };

    for (const auto& id : train_ids) {
        const auto& s = ds.by_id(id);
        auto m = mean_color(s.image);
        for (int ch = 0; ch < 3; ++ch) centroids[s.class_id][ch] += m[ch];
        ++counts[s.class_id];
    }
    for (int c = 0; c < n_classes; ++c)
        if (counts[c] > 0)
            for (int ch = 0; ch < 3; ++ch) centroids[c][ch] /= counts[c];

    int correct = 0;
    for (const auto& id : eval_ids) {
        const auto& s = ds.by_id(id);
        auto m = mean_color(s.image);
        int best = -1;
        double best_d = std::numeric_limits<double>::max();
        for (int c = 0; c < n_classes; ++c) {
            if (counts[c] == 0) continue;
            double d = 0.0;
            for (int ch = 0; ch < 3; ++ch)
                d += (m[ch] - centroids[c][ch]) * (m[ch] - centroids[c][ch]);
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        if (best == s.class_id) ++correct;
    }
    return eval_ids.empty() ? 0.0 : static_cast<double>(correct) / eval_ids.size();
}

}  // namespace defend
