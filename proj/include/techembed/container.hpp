#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>
#include <string_view>
#include <vector>

namespace techembed {

enum class DType { f32, f64 };

/// One named tensor in a container file.
struct TensorRecord {
    std::string name;
    std::string section;
    DType dtype = DType::f32;
    std::vector<std::size_t> shape;
    std::vector<double> data;
};

/// Binary container shared by checkpoints and indexes:
///   4-byte magic, u32 version, u64 header length (little-endian),
///   JSON header, raw little-endian tensor payload.
/// The header's "tensors" array lists name, section, dtype, shape, offset and
/// byte length of every tensor. Other header keys are caller metadata.
struct Container {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<TensorRecord> tensors;

    [[nodiscard]] const TensorRecord* find(std::string_view name) const;
};

constexpr std::uint32_t kContainerVersion = 1;

std::string encode_container(std::string_view magic, const Container& c);

/// Throws FormatError on wrong magic, unsupported version, truncation or an
/// inconsistent header. `what` names the file in messages.
Container decode_container(std::string_view magic, std::string_view bytes, const std::string& what);

}  // namespace techembed
