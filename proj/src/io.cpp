#include "coetal/io.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "coetal/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "f32 files are little-endian; big-endian hosts are not supported");

namespace coetal::io {

namespace fs = std::filesystem;
using nlohmann::json;

static fs::path sidecar_path(const fs::path& f32_path) {
    fs::path p = f32_path;
    p.replace_extension(".json");
    return p;
}

void write_f32(const fs::path& path, const Mat& values, std::optional<double> duration_s) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    std::vector<float> row(static_cast<size_t>(values.cols()));
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        for (Eigen::Index j = 0; j < values.cols(); ++j)
            row[static_cast<size_t>(j)] = static_cast<float>(values(i, j));
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("short write: " + path.string());
    out.close();

    json side;
    side["t"] = values.rows();
    side["d"] = values.cols();
    if (duration_s) side["duration_s"] = *duration_s;
    write_text_file(sidecar_path(path), side.dump(2) + "\n");
}

F32File read_f32(const fs::path& path) {
    json side = parse_json_file(sidecar_path(path));
    if (!side.contains("t") || !side.contains("d"))
        throw std::runtime_error("sidecar missing t/d: " + sidecar_path(path).string());
    const Eigen::Index t = side.at("t").get<Eigen::Index>();
    const Eigen::Index d = side.at("d").get<Eigen::Index>();
    if (t < 0 || d <= 0) throw std::runtime_error("sidecar declares invalid shape: " + path.string());

    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("missing feature file: " + path.string());
    const auto bytes = static_cast<std::uint64_t>(in.tellg());
    const std::uint64_t expect = static_cast<std::uint64_t>(t) * static_cast<std::uint64_t>(d) * sizeof(float);
    if (bytes != expect) {
        std::ostringstream msg;
        msg << "shape mismatch for " << path.string() << ": sidecar declares " << t << "x" << d
            << " (" << expect << " bytes) but file holds " << bytes << " bytes";
        throw std::runtime_error(msg.str());
    }
    in.seekg(0);

    F32File result;
    result.values.resize(t, d);
    std::vector<float> row(static_cast<size_t>(d));
    for (Eigen::Index i = 0; i < t; ++i) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(float)));
        for (Eigen::Index j = 0; j < d; ++j) result.values(i, j) = row[static_cast<size_t>(j)];
    }
    if (!in) throw std::runtime_error("short read: " + path.string());
    if (side.contains("duration_s")) result.duration_s = side.at("duration_s").get<double>();
    return result;
}

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << content;
    if (!out) throw std::runtime_error("short write: " + path.string());
}

json parse_json_file(const fs::path& path) {
    const std::string text = read_text_file(path);
    try {
        return json::parse(text, nullptr, /*allow_exceptions=*/true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("invalid JSON in " + path.string() + ": " + e.what());
    }
}

void append_jsonl(const fs::path& path, const json& record) {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw std::runtime_error("cannot open for append: " + path.string());
    out << record.dump() << "\n";
}

std::vector<json> read_jsonl(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path.string());
    std::vector<json> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        records.push_back(json::parse(line));
    }
    return records;
}

std::uint64_t hash_file(const fs::path& path) {
    return fnv1a64(read_text_file(path));
}

} // namespace coetal::io
