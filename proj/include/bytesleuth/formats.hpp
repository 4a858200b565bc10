#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bytesleuth/common.hpp"
#include "bytesleuth/detector.hpp"
#include "bytesleuth/segmentation.hpp"

namespace bytesleuth::fmt {

std::string hex_encode(ByteView data);
Bytes hex_decode(std::string_view text);

Bytes read_file(const std::string& path);
void write_file(const std::string& path, ByteView data);
void write_text(const std::string& path, const std::string& text);

// model file: {"kind":"ngram","n":..,"bias":..,"weights":{"<gram hex>":w,...}}
det::NgramModel load_ngram_model(const std::string& path);
void save_ngram_model(const det::NgramModel& model, const std::string& path);

// planted spec: {"kind":"planted","base_score":..,
//                "signatures":[{"pattern":"<hex>","weight":..},...]}
struct PlantedSpec {
    double base_score = 0.0;
    std::vector<det::PlantedSignature> signatures;
};
PlantedSpec load_planted_spec(const std::string& path);
void save_planted_spec(const PlantedSpec& spec, const std::string& path);

// listing file: [{"start":..,"length":..},...]
std::vector<seg::BlockRecord> load_listing(const std::string& path);
void save_listing(const std::vector<seg::BlockRecord>& blocks, const std::string& path);

std::string policy_to_string(const seg::OcclusionPolicy& policy);

}  // namespace bytesleuth::fmt
