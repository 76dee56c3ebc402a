#include "lindit/captions.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace lindit {

using nlohmann::json;

std::vector<double> caption_probs(const CaptionRecord& record, double tau) {
    if (record.captions.empty())
        throw DataError("caption_probs: record " + record.image_id + " has no captions");
    if (tau <= 0.0) throw ConfigError("caption_probs: temperature must be > 0");
    const std::size_t n = record.captions.size();
    std::vector<double> p(n);
    double mx = -1e300;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(record.captions[i].clip_score))
            throw DataError("caption_probs: non-finite clip score");
        p[i] = record.captions[i].clip_score / tau;
        mx = std::max(mx, p[i]);
    }
    double z = 0.0;
    for (auto& v : p) {
        v = std::exp(v - mx);
        z += v;
    }
    for (auto& v : p) v /= z;
    return p;
}

std::size_t sample_caption_index(const CaptionRecord& record, const SamplerConfig& cfg, Rng& rng) {
    if (record.captions.empty())
        throw DataError("sample_caption: record " + record.image_id + " has no captions");
    if (cfg.argmax) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < record.captions.size(); ++i)
            if (record.captions[i].clip_score > record.captions[best].clip_score) best = i;
        return best;
    }
    const auto p = caption_probs(record, cfg.temperature);
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) return i;
    }
    return p.size() - 1;
}

const Caption& sample_caption(const CaptionRecord& record, const SamplerConfig& cfg, Rng& rng) {
    return record.captions[sample_caption_index(record, cfg, rng)];
}

std::string chi_wrap(const std::string& user_prompt, const std::string& tmpl) {
    const std::string slot = "{p}";
    const auto first = tmpl.find(slot);
    if (first == std::string::npos)
        throw DataError("chi_wrap: template has no {p} placeholder");
    if (tmpl.find(slot, first + slot.size()) != std::string::npos)
        throw DataError("chi_wrap: template has multiple {p} placeholders");
    std::string out = tmpl;
    out.replace(first, slot.size(), user_prompt);
    return out;
}

std::vector<CaptionRecord> load_captions(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("load_captions: cannot open " + path);
    std::vector<CaptionRecord> records;
    std::string line, bad_lines;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        bool ok = !j.is_discarded() && j.contains("image_id") && j.contains("captions") &&
                  j["captions"].is_array() && !j["captions"].empty();
        CaptionRecord rec;
        if (ok) {
            rec.image_id = j["image_id"].get<std::string>();
            for (const auto& cj : j["captions"]) {
                if (!cj.contains("text") || !cj.contains("clip_score") ||
                    !cj["clip_score"].is_number()) {
                    ok = false;
                    break;
                }
                rec.captions.push_back({cj["text"].get<std::string>(), cj["clip_score"].get<double>()});
            }
        }
        if (!ok) {
            bad_lines += (bad_lines.empty() ? "" : ", ") + std::to_string(lineno);
            continue;
        }
        records.push_back(std::move(rec));
    }
    if (!bad_lines.empty())
        throw DataError("load_captions: malformed NDJSON at line(s) " + bad_lines);
    return records;
}

void save_captions(const std::vector<CaptionRecord>& records, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw DataError("save_captions: cannot open " + path);
    for (const auto& rec : records) {
        json j;
        j["image_id"] = rec.image_id;
        j["captions"] = json::array();
        for (const auto& c : rec.captions)
            j["captions"].push_back({{"text", c.text}, {"clip_score", c.clip_score}});
        f << j.dump() << "\n";
    }
}

}  // namespace lindit
