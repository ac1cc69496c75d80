#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>

#include "fedlips/dataset.hpp"

// CIFAR-10 binary version: each record is one label byte followed by 3072
// pixel bytes (1024 red, 1024 green, 1024 blue; each plane row-major 32x32).
namespace fedlips::data {

inline constexpr std::size_t kCifar10Side = 32;
inline constexpr std::size_t kCifar10Pixels = 3 * kCifar10Side * kCifar10Side;
inline constexpr std::size_t kCifar10RecordBytes = 1 + kCifar10Pixels;
inline constexpr std::size_t kCifar10Classes = 10;

// Per-channel normalization applied after scaling bytes to [0, 1].
inline constexpr std::array<double, 3> kCifar10Mean{0.4914, 0.4822, 0.4465};
inline constexpr std::array<double, 3> kCifar10Std{0.2470, 0.2435, 0.2616};

enum class Cifar10Split { kTrain, kTest, kAll };

// `source` names the origin in error messages.
Dataset parse_cifar10_records(std::span<const std::uint8_t> bytes, std::string_view source);
Dataset read_cifar10_file(const std::filesystem::path& path);

// kTrain reads data_batch_1..5.bin, kTest reads test_batch.bin, kAll both.
// Every listed file must exist.
Dataset load_cifar10(const std::filesystem::path& directory,
                     Cifar10Split split = Cifar10Split::kTrain);

double cifar10_normalize(std::uint8_t byte, std::size_t channel) noexcept;

}  // namespace fedlips::data
