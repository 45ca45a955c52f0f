#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "techembed/corpus.hpp"
#include "techembed/encoder.hpp"
#include "techembed/summarizer.hpp"

namespace techembed {

/// Everything needed to embed text: base weights, soft prompts, the
/// vocabulary and optionally the summarizer weights.
struct Checkpoint {
    EncoderModel model;
    SoftPrompt prompt;
    /// Prompts are applied at encode time only once they have been tuned.
    bool prompt_tuned = false;
    std::optional<SummaryWeights> summarizer;
    Vocabulary vocabulary;

    explicit Checkpoint(const EncoderConfig& config) : model(config), prompt(SoftPrompt::init(config)) {}

    [[nodiscard]] Tokenizer tokenizer() const { return Tokenizer(model.config().vocab_size, vocabulary); }
};

/// "TEMB" container; tensors stored as f32.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes, const std::string& what = "checkpoint");

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// As above, then throws DimensionError if the architecture differs from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const EncoderConfig& expected);

/// Throws DimensionError naming the first architecture field that differs.
void require_compatible(const EncoderConfig& stored, const EncoderConfig& requested);

/// Hex FNV-1a of the serialized bytes; identifies the encoder an index was built with.
std::string fingerprint_bytes(std::string_view bytes);
std::string checkpoint_fingerprint(const std::filesystem::path& path);

}  // namespace techembed
