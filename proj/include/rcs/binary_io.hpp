#pragma once

// Little-endian binary encoding shared by the dataset and checkpoint formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "rcs/error.hpp"

namespace rcs::io {

class Writer {
public:
    void bytes(const char* data, std::size_t n) { buf_.insert(buf_.end(), data, data + n); }

    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }

    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }

    void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

    const std::vector<char>& buffer() const { return buf_; }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + path + " for writing");
        out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!out) throw IoError("write failed: " + path);
    }

private:
    std::vector<char> buf_;
};

class Reader {
public:
    static Reader open(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open " + path);
        std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return Reader(std::move(data), path);
    }

    Reader(std::vector<char> data, std::string name) : data_(std::move(data)), name_(std::move(name)) {}

    void expect_magic(const char (&magic)[5]) {
        need(4);
        if (std::memcmp(data_.data() + pos_, magic, 4) != 0)
            throw IoError(name_ + ": bad magic, expected \"" + std::string(magic, 4) + "\"");
        pos_ += 4;
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }

    bool at_end() const { return pos_ == data_.size(); }
    const std::string& name() const { return name_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > data_.size()) throw IoError(name_ + ": truncated file");
    }

    std::vector<char> data_;
    std::string name_;
    std::size_t pos_ = 0;
};

}  // namespace rcs::io
