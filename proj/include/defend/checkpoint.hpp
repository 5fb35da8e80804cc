#pragma once

#include <map>
#include <string>

#include "defend/data.hpp"
#include "defend/decoder.hpp"
#include "defend/fem.hpp"
#include "defend/patching.hpp"

namespace defend {

// Every parameter collection of the pipeline. Teacher tensors never carry
// gradients; they are updated by EMA only.
struct ModelState {
    EncoderConfig enc;
    SamplerConfig sampler;
    FemConfig fem_cfg;
    DecoderConfig dec_cfg;

    ParamMap student;   // patch encoder, trained by gradient
    ParamMap teacher;   // global encoder, EMA shadow of the student
    ParamMap text;
    ParamMap fem;
    ParamMap decoder;
    ParamMap probe;     // linear probe head, filled by evaluation

    Vocab vocab;
    long long step = 0;
    int phase_index = 0;
    int epochs_done = 0;
};

// Builds a freshly initialized state; the teacher starts as a bit-exact
// copy of the student.
ModelState init_model_state(const EncoderConfig& enc, const SamplerConfig& sampler,
                            const FemConfig& fem, const DecoderConfig& dec,
                            const Vocab& vocab, uint64_t seed);

// Single-archive checkpoint: a JSON header (configs, vocabulary, array
// manifest) followed by raw little-endian doubles.
void save_checkpoint(const std::string& path, const ModelState& state,
                     const std::map<std::string, ParamMap>* extra = nullptr);

struct LoadedCheckpoint {
    ModelState state;
    std::map<std::string, ParamMap> extra;  // optimizer state when present
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Header introspection without loading arrays (dimension checks).
Json read_checkpoint_header(const std::string& path);

}  // namespace defend
