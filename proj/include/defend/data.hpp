#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "defend/image.hpp"
#include "defend/text.hpp"

namespace defend {

using Json = nlohmann::ordered_json;

// The three-way product taxonomy and the sub-categories each admits.
const std::vector<std::string>& category_names();
const std::vector<std::string>& sub_categories_of(const std::string& category);
// All sub-categories in canonical class order (stable across runs; the
// trailing entries become the zero-shot classes).
const std::vector<std::string>& canonical_class_order();

struct AnnotationRecord {
    std::string query;
    std::string image_url;
    std::string image_id;
    std::string category;
    std::string sub_category;  // serialized as "sub-category"
    Json health_impact_labels;
    Json usage_context;
    Json content_purpose;
    Json environmental_impact;

    Json to_json() const;
};

// Validates a parsed JSON object against the annotation schema. Returns
// every violation found (empty means valid); never throws on malformed
// content.
std::vector<std::string> validate_record(const Json& obj);
AnnotationRecord record_from_json(const Json& obj);

struct SyntheticSample {
    Image image;
    AnnotationRecord record;
    std::string prompt_text;       // category + sub-category phrase
    std::string description_text;  // full templated description (= record.query)
    int class_id = 0;
};

struct SplitManifest {
    std::vector<std::string> train, val, test, zeroshot;
    std::vector<std::string> zeroshot_classes;  // sub-categories held out

    Json to_json() const;
    static SplitManifest from_json(const Json& j);
};

struct GeneratorConfig {
    int n_classes = 8;      // >= 4, <= canonical_class_order().size()
    int n_per_class = 60;
    int image_size = 64;
    int patch_size = 8;     // image_size must divide by it
    uint64_t seed = 7;
};

struct SyntheticDataset {
    std::vector<SyntheticSample> samples;
    SplitManifest splits;
    std::vector<std::string> class_names;  // index = class_id
};

SyntheticDataset generate_synthetic_dataset(const GeneratorConfig& cfg);

// Derives the text-encoder input from a record. The decoder target is the
// full description (the record's query field).
std::string prompt_text_for(const std::string& category, const std::string& sub_category);

// dataset.jsonl + splits.json + images/<image_id>.png under dir
void write_dataset(const std::string& dir, const SyntheticDataset& ds);

struct LoadedSample {
    std::string image_id;
    Image image;
    AnnotationRecord record;
    std::string prompt_text;
    std::string description_text;
    int class_id = 0;
};

struct Dataset {
    std::vector<LoadedSample> samples;
    SplitManifest splits;
    std::vector<std::string> class_names;
    std::map<std::string, std::size_t> index_by_id;
    Vocab vocab;  // built over the full corpus at load time
    int image_size = 0;

    const LoadedSample& by_id(const std::string& id) const;
    std::vector<std::size_t> split_indices(const std::vector<std::string>& ids) const;
};

Dataset load_dataset(const std::string& dir);

// Nearest-centroid classifier on per-channel mean pixel colors; the
// separability baseline the probe must beat.
double pixel_mean_centroid_accuracy(const Dataset& ds,
                                    const std::vector<std::string>& train_ids,
                                    const std::vector<std::string>& eval_ids);

}  // namespace defend
