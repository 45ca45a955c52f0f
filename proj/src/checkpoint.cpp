#include "techembed/checkpoint.hpp"

#include "techembed/container.hpp"
#include "techembed/error.hpp"
#include "techembed/util.hpp"

namespace techembed {
namespace {

constexpr std::string_view kMagic = "TEMB";

TensorRecord record(const std::string& name, const std::string& section, const Matrix& m) {
    return {name, section, DType::f32, {m.rows(), m.cols()}, m.values()};
}

void assign(Parameter& p, const TensorRecord& t, const std::string& what) {
    if (t.shape.size() != 2 || t.shape[0] != p.value.rows() || t.shape[1] != p.value.cols()) {
        std::string shape;
        for (const auto s : t.shape) shape += (shape.empty() ? "" : "x") + std::to_string(s);
        throw DimensionError(what + ": tensor " + t.name + " is " + shape + ", model expects " +
                             p.value.shape_string());
    }
    p.value.values() = t.data;
}

const TensorRecord& require_tensor(const Container& c, const std::string& name, const std::string& what) {
    const auto* t = c.find(name);
    if (!t) throw FormatError(what + ": missing tensor " + name);
    return *t;
}

}  // namespace

void require_compatible(const EncoderConfig& stored, const EncoderConfig& requested) {
    const auto check = [](const char* field, auto a, auto b) {
        if (a != b) {
            throw DimensionError(std::string("checkpoint has ") + field + "=" + std::to_string(a) +
                                 " but the configuration requests " + field + "=" + std::to_string(b));
        }
    };
    check("dim", stored.dim, requested.dim);
    check("vocab_size", stored.vocab_size, requested.vocab_size);
    check("layers", stored.layers, requested.layers);
    check("heads", stored.heads, requested.heads);
    check("prompt_len", stored.prompt_len, requested.prompt_len);
    check("ffn_mult", stored.ffn_mult, requested.ffn_mult);
    check("share_base", static_cast<int>(stored.share_base), static_cast<int>(requested.share_base));
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    Container c;
    c.meta["format"] = "techembed-checkpoint";
    c.meta["config"] = ckpt.model.config();
    c.meta["prompt_tuned"] = ckpt.prompt_tuned;
    c.meta["vocabulary"] = ckpt.vocabulary.surfaces();
    for (const auto* p : ckpt.model.parameters()) c.tensors.push_back(record(p->name, "base", p->value));
    c.tensors.push_back(record("prompt_q", "prompt_q", ckpt.prompt.query.value));
    c.tensors.push_back(record("prompt_d", "prompt_d", ckpt.prompt.document.value));
    if (ckpt.summarizer) {
        ckpt.summarizer->validate(ckpt.model.config().dim);
        c.tensors.push_back(record("summarizer/W", "summarizer", ckpt.summarizer->w));
        Matrix u(1, ckpt.summarizer->u.size());
        u.values() = ckpt.summarizer->u;
        c.tensors.push_back(record("summarizer/u", "summarizer", u));
    }
    return encode_container(kMagic, c);
}

Checkpoint deserialize_checkpoint(std::string_view bytes, const std::string& what) {
    const Container c = decode_container(kMagic, bytes, what);
    EncoderConfig config;
    std::vector<std::string> vocab;
    bool tuned = false;
    try {
        config = c.meta.at("config").get<EncoderConfig>();
        vocab = c.meta.at("vocabulary").get<std::vector<std::string>>();
        tuned = c.meta.at("prompt_tuned").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(what + ": malformed header: " + e.what());
    }
    Checkpoint ckpt(config);
    ckpt.prompt_tuned = tuned;
    ckpt.vocabulary = Vocabulary(std::move(vocab));
    std::size_t expected = 2;
    for (auto* p : ckpt.model.parameters()) {
        assign(*p, require_tensor(c, p->name, what), what);
        ++expected;
    }
    assign(ckpt.prompt.query, require_tensor(c, "prompt_q", what), what);
    assign(ckpt.prompt.document, require_tensor(c, "prompt_d", what), what);
    if (c.find("summarizer/W")) {
        auto w = SummaryWeights::zeros(config.dim);
        Parameter pw{"summarizer/W", w.w};
        Parameter pu{"summarizer/u", Matrix(1, config.dim)};
        assign(pw, require_tensor(c, "summarizer/W", what), what);
        assign(pu, require_tensor(c, "summarizer/u", what), what);
        w.w = pw.value;
        w.u = pu.value.values();
        ckpt.summarizer = std::move(w);
        expected += 2;
    }
    if (c.tensors.size() != expected) {
        throw FormatError(what + ": holds " + std::to_string(c.tensors.size()) + " tensors, expected " +
                          std::to_string(expected));
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return deserialize_checkpoint(read_file(path), path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const EncoderConfig& expected) {
    auto ckpt = load_checkpoint(path);
    require_compatible(ckpt.model.config(), expected);
    return ckpt;
}

std::string fingerprint_bytes(std::string_view bytes) { return to_hex(fnv1a64(bytes)); }

std::string checkpoint_fingerprint(const std::filesystem::path& path) { return fingerprint_bytes(read_file(path)); }

}  // namespace techembed
