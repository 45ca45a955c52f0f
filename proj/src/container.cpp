#include "techembed/container.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "techembed/error.hpp"

namespace techembed {
namespace {

void put_le(std::string& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(std::string_view in, std::size_t pos, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(in[pos + i])) << (8 * i);
    return v;
}

std::size_t width(DType t) { return t == DType::f32 ? 4 : 8; }
const char* dtype_name(DType t) { return t == DType::f32 ? "f32" : "f64"; }

}  // namespace

const TensorRecord* Container::find(std::string_view name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

std::string encode_container(std::string_view magic, const Container& c) {
    if (magic.size() != 4) throw ConfigError("container magic must be 4 bytes");
    std::string payload;
    nlohmann::json index = nlohmann::json::array();
    for (const auto& t : c.tensors) {
        std::size_t count = 1;
        for (const auto s : t.shape) count *= s;
        if (count != t.data.size()) {
            throw DimensionError("tensor " + t.name + " holds " + std::to_string(t.data.size()) +
                                 " values for its shape");
        }
        const std::size_t offset = payload.size();
        for (const double v : t.data) {
            if (t.dtype == DType::f32) {
                put_le(payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
            } else {
                put_le(payload, std::bit_cast<std::uint64_t>(v), 8);
            }
        }
        index.push_back({{"name", t.name},
                         {"section", t.section},
                         {"dtype", dtype_name(t.dtype)},
                         {"shape", t.shape},
                         {"offset", offset},
                         {"nbytes", payload.size() - offset}});
    }
    nlohmann::json header = c.meta;
    header["tensors"] = std::move(index);
    header["payload_bytes"] = payload.size();
    const std::string text = header.dump();

    std::string out(magic);
    put_le(out, kContainerVersion, 4);
    put_le(out, text.size(), 8);
    out += text;
    out += payload;
    return out;
}

Container decode_container(std::string_view magic, std::string_view bytes, const std::string& what) {
    if (bytes.size() < 16) throw FormatError(what + ": truncated (" + std::to_string(bytes.size()) + " bytes)");
    if (bytes.substr(0, 4) != magic) {
        throw FormatError(what + ": bad magic, expected \"" + std::string(magic) + "\"");
    }
    const auto version = get_le(bytes, 4, 4);
    if (version != kContainerVersion) {
        throw FormatError(what + ": unsupported format version " + std::to_string(version) + " (expected " +
                          std::to_string(kContainerVersion) + ")");
    }
    const auto header_len = get_le(bytes, 8, 8);
    if (header_len > bytes.size() - 16) throw FormatError(what + ": truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(16, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(what + ": corrupt header: " + e.what());
    }
    const std::string_view payload = bytes.substr(16 + header_len);
    Container c;
    try {
        if (!header.is_object() || !header.contains("tensors") || !header.contains("payload_bytes")) {
            throw FormatError(what + ": header lacks tensor table");
        }
        const auto declared = header.at("payload_bytes").get<std::uint64_t>();
        if (payload.size() != declared) {
            throw FormatError(what + ": payload is " + std::to_string(payload.size()) + " bytes, header declares " +
                              std::to_string(declared) + " (truncated or corrupt)");
        }
        for (const auto& entry : header.at("tensors")) {
            TensorRecord t;
            t.name = entry.at("name").get<std::string>();
            t.section = entry.at("section").get<std::string>();
            const auto dt = entry.at("dtype").get<std::string>();
            if (dt == "f32") {
                t.dtype = DType::f32;
            } else if (dt == "f64") {
                t.dtype = DType::f64;
            } else {
                throw FormatError(what + ": tensor " + t.name + " has unknown dtype " + dt);
            }
            t.shape = entry.at("shape").get<std::vector<std::size_t>>();
            const auto offset = entry.at("offset").get<std::uint64_t>();
            const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
            std::size_t count = 1;
            for (const auto s : t.shape) count *= s;
            if (nbytes != count * width(t.dtype) || offset > payload.size() || nbytes > payload.size() - offset) {
                throw FormatError(what + ": tensor " + t.name + " lies outside the payload");
            }
            t.data.resize(count);
            for (std::size_t i = 0; i < count; ++i) {
                const std::size_t pos = offset + i * width(t.dtype);
                t.data[i] = t.dtype == DType::f32
                                ? static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(get_le(payload, pos, 4))))
                                : std::bit_cast<double>(get_le(payload, pos, 8));
            }
            c.tensors.push_back(std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(what + ": malformed tensor table: " + e.what());
    }
    header.erase("tensors");
    header.erase("payload_bytes");
    c.meta = std::move(header);
    return c;
}

}  // namespace techembed
