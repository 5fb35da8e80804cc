#pragma once

#include <string>
#include <vector>

#include "defend/data.hpp"
#include "defend/evaluation.hpp"
#include "defend/trainer.hpp"

namespace defend {

// Flat dotted-key configuration: defaults -> preset -> config file ->
// --set overrides, in that order. Values keep the JSON type of their
// default; unknown keys are rejected.
class RunConfig {
  public:
    static RunConfig defaults();

    void apply_preset(const std::string& name);     // desk-smoke | desk-full
    void apply_file(const std::string& path);
    void apply_override(const std::string& key_equals_value);
    void set_value(const std::string& key, const Json& value);

    int get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::string get_string(const std::string& key) const;

    Json to_json() const;
    void write_resolved(const std::string& out_dir) const;

    uint64_t seed() const;

    GeneratorConfig generator_config() const;
    SamplerConfig sampler_config() const;
    EncoderConfig encoder_config(int vocab_size) const;
    FemConfig fem_config() const;
    DecoderConfig decoder_config() const;
    TrainConfig train_config() const;
    ProbeConfig probe_config() const;

  private:
    std::map<std::string, Json> values_;
    const Json& at(const std::string& key) const;
};

}  // namespace defend
