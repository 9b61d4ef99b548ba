#pragma once

// Binary time-tag files.
//
// Layout (little-endian, no padding):
//   header  25 bytes: magic "QNT1" | u16 version | u16 user_id | u8 merged_flag
//                     | u64 record_count | u64 duration_ps
//   records u64 timestamp_ps [| u8 detector_id when merged_flag == 0]

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "qnet/photonsim.hpp"

namespace qnet::tagio {

inline constexpr std::array<char, 4> kMagic{'Q', 'N', 'T', '1'};
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 25;

struct TagFileHeader {
    std::array<char, 4> magic = kMagic;
    std::uint16_t version = kVersion;
    std::uint16_t user_id = 0;
    std::uint8_t merged_flag = 0;
    std::uint64_t record_count = 0;
    std::uint64_t duration_ps = 0;

    std::size_t record_size() const noexcept { return merged_flag ? 8 : 9; }

    bool operator==(const TagFileHeader&) const = default;
};

struct TagRecord {
    std::uint64_t timestamp_ps = 0;
    std::uint8_t detector_id = 0;

    bool operator==(const TagRecord&) const = default;
};

/// Writes atomically (temp file + rename). For merged headers the detector
/// ids are dropped. Throws Error(UnsortedInput) or Error(Io).
void write_stream(const std::filesystem::path& path, const TagFileHeader& header, std::span<const TagRecord> records);

std::pair<TagFileHeader, std::vector<TagRecord>> read_stream(const std::filesystem::path& path);

/// Chunked reader; memory use is bounded by the chunk the caller asks for.
class TagReader {
public:
    explicit TagReader(const std::filesystem::path& path);

    const TagFileHeader& header() const noexcept { return header_; }

    /// Appends up to max_records to out; returns how many were read. Zero
    /// means the stream is exhausted.
    std::size_t read_chunk(std::vector<TagRecord>& out, std::size_t max_records);

private:
    std::ifstream in_;
    TagFileHeader header_;
    std::uint64_t remaining_ = 0;
    std::uint64_t last_timestamp_ = 0;
    bool first_ = true;
};

std::vector<std::uint8_t> encode_header(const TagFileHeader& header);
TagFileHeader decode_header(std::span<const std::uint8_t> bytes);

std::vector<TagRecord> to_records(const TagStream& stream);
std::vector<TagRecord> to_records(const MergedTagStream& stream);
TagStream to_stream(std::span<const TagRecord> records);

void write_tags(const std::filesystem::path& path, UserId user, const TagStream& stream, std::uint64_t duration_ps);
void write_merged(const std::filesystem::path& path, const MergedTagStream& stream, std::uint64_t duration_ps);

/// Debug export: timestamp_ps,detector_id (detector column omitted when merged).
void export_csv(std::ostream& os, const TagFileHeader& header, std::span<const TagRecord> records);

}  // namespace qnet::tagio
