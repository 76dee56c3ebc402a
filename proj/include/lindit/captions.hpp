#pragma once

#include <string>
#include <vector>

#include "lindit/rng.hpp"
#include "lindit/tensor.hpp"

namespace lindit {

struct Caption {
    std::string text;
    double clip_score = 0.0;
};

struct CaptionRecord {
    std::string image_id;
    std::vector<Caption> captions;
};

struct SamplerConfig {
    double temperature = 0.1;  // > 0; argmax mode is a separate flag
    bool argmax = false;
    std::uint64_t seed = 0;
};

// P(c_i) = exp(c_i / tau) / sum_j exp(c_j / tau), max-subtracted
std::vector<double> caption_probs(const CaptionRecord& record, double tau);

// draws by caption_probs; argmax mode returns the highest score, ties broken
// by lowest index
std::size_t sample_caption_index(const CaptionRecord& record, const SamplerConfig& cfg, Rng& rng);
const Caption& sample_caption(const CaptionRecord& record, const SamplerConfig& cfg, Rng& rng);

// instruction-template wrapping; template must contain exactly one "{p}" slot
std::string chi_wrap(const std::string& user_prompt, const std::string& tmpl);

// NDJSON: {"image_id": ..., "captions": [{"text": ..., "clip_score": ...}]}
std::vector<CaptionRecord> load_captions(const std::string& path);
void save_captions(const std::vector<CaptionRecord>& records, const std::string& path);

}  // namespace lindit
