#pragma once

#include <cstdint>
#include <string_view>

namespace vfd {

class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    /// Identity recorded in dataset metadata.
    virtual std::string_view name() const = 0;
    virtual std::uint64_t count(std::string_view text) const = 0;
};

/// Whitespace-and-punctuation splitter: a token is either a maximal run of
/// word bytes (ASCII alphanumerics, '_' and any byte >= 0x80) or a single
/// other non-whitespace byte.
class WhitespacePunctTokenizer final : public Tokenizer {
public:
    std::string_view name() const override { return "ws-punct-v1"; }
    std::uint64_t count(std::string_view text) const override;
};

const Tokenizer& default_tokenizer();

inline std::uint64_t count_tokens(std::string_view text, const Tokenizer& tok = default_tokenizer()) {
    return tok.count(text);
}

}  // namespace vfd
