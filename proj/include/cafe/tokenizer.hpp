#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace cafe {

// Injected encode/decode interface. The corpus layer never depends on a
// concrete model; backends expose the tokenizer they were built with.
class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual std::vector<int> encode(std::string_view text) const = 0;
    virtual std::string decode(const std::vector<int>& ids) const = 0;
    virtual int vocab_size() const = 0;
    virtual std::string name() const = 0;
};

// Byte-level fallback tokenizer: token id == byte value. Concatenative
// (encode(a+b) == encode(a)+encode(b)), which makes span accounting exact.
class ByteTokenizer final : public Tokenizer {
public:
    std::vector<int> encode(std::string_view text) const override {
        std::vector<int> ids;
        ids.reserve(text.size());
        for (unsigned char c : text) ids.push_back(static_cast<int>(c));
        return ids;
    }
    std::string decode(const std::vector<int>& ids) const override {
        std::string out;
        out.reserve(ids.size());
        for (int id : ids) out.push_back(static_cast<char>(static_cast<unsigned char>(id & 0xff)));
        return out;
    }
    int vocab_size() const override { return 256; }
    std::string name() const override { return "byte"; }
};

}  // namespace cafe
