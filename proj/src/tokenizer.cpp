#include "vfd/tokenizer.hpp"

namespace vfd {

namespace {

bool is_space(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

bool is_word(unsigned char c) {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' ||
           c >= 0x80;
}

}  // namespace

std::uint64_t WhitespacePunctTokenizer::count(std::string_view text) const {
    std::uint64_t n = 0;
    bool in_word = false;
    for (unsigned char c : text) {
        if (is_word(c)) {
            if (!in_word) ++n;
            in_word = true;
        } else {
            in_word = false;
            if (!is_space(c)) ++n;
        }
    }
    return n;
}

const Tokenizer& default_tokenizer() {
    static const WhitespacePunctTokenizer tok;
    return tok;
}

}  // namespace vfd
