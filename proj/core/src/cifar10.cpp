#include "fedlips/cifar10.hpp"

#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "fedlips/error.hpp"

namespace fedlips::data {

double cifar10_normalize(std::uint8_t byte, std::size_t channel) noexcept {
  return (static_cast<double>(byte) / 255.0 - kCifar10Mean[channel]) / kCifar10Std[channel];
}

Dataset parse_cifar10_records(std::span<const std::uint8_t> bytes, std::string_view source) {
  const std::size_t records = bytes.size() / kCifar10RecordBytes;
  if (bytes.size() % kCifar10RecordBytes != 0) {
    throw DataError("truncated CIFAR-10 record at byte offset " +
                    std::to_string(records * kCifar10RecordBytes) + " in " + std::string(source) +
                    " (" + std::to_string(bytes.size()) + " bytes)");
  }
  if (records == 0) throw DataError("no CIFAR-10 records in " + std::string(source));

  Dataset ds{Tensor({records, 3, kCifar10Side, kCifar10Side}), std::vector<int>(records),
             kCifar10Classes};
  const std::size_t plane = kCifar10Side * kCifar10Side;
  for (std::size_t r = 0; r < records; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifar10RecordBytes;
    if (rec[0] >= kCifar10Classes) {
      throw DataError("CIFAR-10 label " + std::to_string(rec[0]) + " at byte offset " +
                      std::to_string(r * kCifar10RecordBytes) + " in " + std::string(source));
    }
    ds.labels[r] = rec[0];
    double* dst = ds.inputs.data() + r * kCifar10Pixels;
    for (std::size_t i = 0; i < kCifar10Pixels; ++i) {
      dst[i] = cifar10_normalize(rec[1 + i], i / plane);
    }
  }
  return ds;
}

Dataset read_cifar10_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open CIFAR-10 file: " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  return parse_cifar10_records(bytes, path.string());
}

Dataset load_cifar10(const std::filesystem::path& directory, Cifar10Split split) {
  std::vector<std::filesystem::path> files;
  if (split != Cifar10Split::kTest) {
    for (int i = 1; i <= 5; ++i) {
      files.push_back(directory / ("data_batch_" + std::to_string(i) + ".bin"));
    }
  }
  if (split != Cifar10Split::kTrain) files.push_back(directory / "test_batch.bin");
  for (const auto& f : files) {
    if (!std::filesystem::exists(f)) throw IoError("missing CIFAR-10 file: " + f.string());
  }

  std::vector<Dataset> parts;
  std::size_t total = 0;
  for (const auto& f : files) {
    parts.push_back(read_cifar10_file(f));
    total += parts.back().size();
  }
  Dataset ds{Tensor({total, 3, kCifar10Side, kCifar10Side}), {}, kCifar10Classes};
  ds.labels.reserve(total);
  double* dst = ds.inputs.data();
  for (auto& p : parts) {
    dst = std::copy(p.inputs.values().begin(), p.inputs.values().end(), dst);
    ds.labels.insert(ds.labels.end(), p.labels.begin(), p.labels.end());
  }
  return ds;
}

}  // namespace fedlips::data
