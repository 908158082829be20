#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace dgseg::png {

struct Rgb8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major
};

struct Gray16 {
    int width = 0;
    int height = 0;
    std::vector<std::uint16_t> pixels;  // row-major
};

void write_rgb8(const std::filesystem::path& path, const Rgb8& img);
Rgb8 read_rgb8(const std::filesystem::path& path);
void write_gray16(const std::filesystem::path& path, const Gray16& img);
Gray16 read_gray16(const std::filesystem::path& path);

}  // namespace dgseg::png
