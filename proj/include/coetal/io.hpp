#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "coetal/tensor.hpp"

namespace coetal::io {

// Raw feature / parameter tensor files: little-endian float32, row-major,
// extension `.f32`, with a JSON sidecar `<stem>.json` holding
// {"t": rows, "d": cols} and, for feature sequences, "duration_s".
struct F32File {
    Mat values;
    std::optional<double> duration_s;
};

void write_f32(const std::filesystem::path& path, const Mat& values,
               std::optional<double> duration_s = std::nullopt);
F32File read_f32(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);

// Parses JSON, allowing // comments. Throws std::runtime_error with the
// path on failure.
nlohmann::json parse_json_file(const std::filesystem::path& path);

void append_jsonl(const std::filesystem::path& path, const nlohmann::json& record);
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

// FNV-1a of the raw file bytes; for determinism checks.
std::uint64_t hash_file(const std::filesystem::path& path);

} // namespace coetal::io
