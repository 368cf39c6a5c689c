#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace uc {

struct Rgb {
    std::uint8_t r{}, g{}, b{};

    friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// 8-bit RGB raster, row-major, interleaved (HWC). Channel values map to
/// [0, 1] as v / 255; the 8-bit form is the canonical lossless representation.
class Image {
public:
    Image() = default;
    Image(int height, int width) : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width * 3) {}

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    bool empty() const noexcept { return data_.empty(); }

    std::uint8_t& at(int y, int x, int c) { return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }
    std::uint8_t at(int y, int x, int c) const { return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }
    float value(int y, int x, int c) const { return static_cast<float>(at(y, x, c)) / 255.0f; }

    const std::vector<std::uint8_t>& bytes() const noexcept { return data_; }
    std::vector<std::uint8_t>& bytes() noexcept { return data_; }

    friend bool operator==(const Image&, const Image&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> data_;
};

void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

} // namespace uc
