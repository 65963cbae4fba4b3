#pragma once

// Reader/writer for the ".aqt" float tensor container:
//
//   bytes 0..7    magic "ADPQTNSR"
//   bytes 8..11   version, u32 LE (= 1)
//   bytes 12..19  header length H, u64 LE
//   next H bytes  UTF-8 JSON {"tensors":[{"name","rows","cols","offset","nbytes"}]}
//   payload       concatenated binary32 LE arrays; offset is relative to byte 20+H
//
// nbytes must equal 4*rows*cols and the payload must hold exactly the
// declared bytes.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bytes.hpp"
#include "error.hpp"
#include "tensor.hpp"

namespace adpq {

inline constexpr std::string_view kTensorMagic = "ADPQTNSR";
inline constexpr std::uint32_t kTensorVersion = 1;

struct TensorFile {
    std::uint32_t version = kTensorVersion;
    std::vector<WeightTensor> tensors;

    friend bool operator==(const TensorFile&, const TensorFile&) = default;
};

inline std::vector<std::uint8_t> serialize_tensor_file(const TensorFile& file) {
    std::set<std::string> names;
    nlohmann::json entries = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& t : file.tensors) {
        validate(t, ErrorCode::InvariantViolation);
        if (!names.insert(t.name).second) {
            fail(ErrorCode::InvariantViolation, "duplicate tensor name '" + t.name + "'");
        }
        const std::uint64_t nbytes = 4ull * t.rows * t.cols;
        entries.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"offset", offset}, {"nbytes", nbytes}});
        offset += nbytes;
    }
    const std::string header = nlohmann::json{{"tensors", entries}}.dump();

    ByteWriter w;
    w.buffer().reserve(20 + header.size() + offset);
    w.raw(kTensorMagic);
    w.u32(kTensorVersion);
    w.u64(header.size());
    w.raw(header);
    for (const auto& t : file.tensors) {
        for (float v : t.data) w.f32(v);
    }
    return w.take();
}

inline TensorFile parse_tensor_file(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, ErrorCode::TruncatedData);
    if (bytes.size() < kTensorMagic.size() || r.str(kTensorMagic.size()) != kTensorMagic) {
        fail(ErrorCode::BadMagic, "not an ADPQTNSR tensor file");
    }
    TensorFile out;
    out.version = r.u32();
    if (out.version != kTensorVersion) {
        fail(ErrorCode::BadVersion, "tensor file version " + std::to_string(out.version));
    }
    const std::uint64_t header_len = r.u64();
    if (header_len > r.remaining()) {
        fail(ErrorCode::TruncatedData, "header length " + std::to_string(header_len) + " exceeds file size");
    }
    const std::string_view header_text = r.str(static_cast<std::size_t>(header_len));
    const auto payload = bytes.subspan(r.position());

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::HeaderParse, e.what());
    }
    if (!header.is_object() || !header.contains("tensors") || !header["tensors"].is_array()) {
        fail(ErrorCode::HeaderParse, "header lacks a 'tensors' array");
    }

    std::set<std::string> names;
    std::uint64_t declared = 0;
    for (const auto& e : header["tensors"]) {
        auto field = [&](const char* key) -> std::uint64_t {
            if (!e.is_object() || !e.contains(key) || !e[key].is_number_unsigned()) {
                fail(ErrorCode::HeaderParse, std::string("tensor entry field '") + key + "' missing or not unsigned");
            }
            return e[key].get<std::uint64_t>();
        };
        if (!e.is_object() || !e.contains("name") || !e["name"].is_string()) {
            fail(ErrorCode::HeaderParse, "tensor entry without a string 'name'");
        }
        WeightTensor t;
        t.name = e["name"].get<std::string>();
        const std::uint64_t rows = field("rows"), cols = field("cols");
        const std::uint64_t offset = field("offset"), nbytes = field("nbytes");
        if (rows == 0 || cols == 0) fail(ErrorCode::HeaderParse, "tensor '" + t.name + "' has an empty dimension");
        if (rows > (1ull << 31) || cols > (1ull << 31) || nbytes != 4 * rows * cols) {
            fail(ErrorCode::HeaderParse, "tensor '" + t.name + "' nbytes disagrees with its shape");
        }
        if (!names.insert(t.name).second) fail(ErrorCode::HeaderParse, "duplicate tensor name '" + t.name + "'");
        if (offset > payload.size() || nbytes > payload.size() - offset) {
            fail(ErrorCode::TruncatedData, "tensor '" + t.name + "' extends past the end of the payload");
        }
        t.rows = static_cast<std::size_t>(rows);
        t.cols = static_cast<std::size_t>(cols);
        ByteReader data(payload.subspan(static_cast<std::size_t>(offset), static_cast<std::size_t>(nbytes)),
                        ErrorCode::TruncatedData);
        t.data.resize(t.rows * t.cols);
        for (auto& v : t.data) v = data.f32();
        validate(t);
        declared += nbytes;
        out.tensors.push_back(std::move(t));
    }
    if (declared != payload.size()) {
        fail(ErrorCode::HeaderParse, "header declares " + std::to_string(declared) + " payload bytes, file holds " +
                                         std::to_string(payload.size()));
    }
    return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::IoError, "cannot open '" + path.string() + "' for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) fail(ErrorCode::IoError, "read error on '" + path.string() + "'");
    return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::IoError, "write error on '" + path.string() + "'");
}

inline TensorFile read_tensor_file(const std::filesystem::path& path) {
    return parse_tensor_file(read_file_bytes(path));
}

inline void write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
    write_file_bytes(path, serialize_tensor_file(file));
}

} // namespace adpq
