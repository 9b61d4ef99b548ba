#include "qnet/tagio.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <string>

#include "qnet/error.hpp"

namespace qnet::tagio {

namespace fs = std::filesystem;

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value)
{
    for (std::size_t i = 0; i < sizeof(T); ++i)
        out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFFU));
}

template <typename T>
T get_le(const std::uint8_t* p)
{
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return static_cast<T>(v);
}

void check_sorted(std::span<const TagRecord> records)
{
    for (std::size_t i = 1; i < records.size(); ++i)
        if (records[i].timestamp_ps < records[i - 1].timestamp_ps)
            throw Error(ErrorCode::UnsortedInput, "record " + std::to_string(i) + " precedes its predecessor");
}

}  // namespace

std::vector<std::uint8_t> encode_header(const TagFileHeader& h)
{
    std::vector<std::uint8_t> out;
    out.reserve(kHeaderSize);
    for (char c : h.magic)
        out.push_back(static_cast<std::uint8_t>(c));
    put_le(out, h.version);
    put_le(out, h.user_id);
    put_le(out, h.merged_flag);
    put_le(out, h.record_count);
    put_le(out, h.duration_ps);
    return out;
}

TagFileHeader decode_header(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < kMagic.size() ||
        !std::equal(kMagic.begin(), kMagic.end(), bytes.begin(),
                    [](char m, std::uint8_t b) { return static_cast<std::uint8_t>(m) == b; }))
        throw Error(ErrorCode::BadMagic, "not a QNT1 tag file");
    if (bytes.size() < kHeaderSize)
        throw Error(ErrorCode::TruncatedFile, "header shorter than " + std::to_string(kHeaderSize) + " bytes");

    TagFileHeader h;
    const std::uint8_t* p = bytes.data() + 4;
    h.version = get_le<std::uint16_t>(p);
    h.user_id = get_le<std::uint16_t>(p + 2);
    h.merged_flag = get_le<std::uint8_t>(p + 4);
    h.record_count = get_le<std::uint64_t>(p + 5);
    h.duration_ps = get_le<std::uint64_t>(p + 13);
    if (h.version != kVersion)
        throw Error(ErrorCode::BadVersion, "unsupported version " + std::to_string(h.version));
    if (h.merged_flag > 1)
        throw Error(ErrorCode::BadHeader, "merged flag must be 0 or 1");
    return h;
}

void write_stream(const fs::path& path, const TagFileHeader& header, std::span<const TagRecord> records)
{
    if (header.magic != kMagic || header.version != kVersion || header.merged_flag > 1)
        throw Error(ErrorCode::BadHeader, "refusing to write an inconsistent header");
    if (header.record_count != records.size())
        throw Error(ErrorCode::CountMismatch, "header count " + std::to_string(header.record_count) + " but " +
                                                  std::to_string(records.size()) + " records given");
    check_sorted(records);
    for (const TagRecord& r : records)
        if (!header.merged_flag && r.detector_id > 1)
            throw Error(ErrorCode::BadRecord, "detector id must be 0 or 1");

    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw Error(ErrorCode::Io, "cannot open " + tmp.string());
        const auto head = encode_header(header);
        out.write(reinterpret_cast<const char*>(head.data()), static_cast<std::streamsize>(head.size()));

        std::vector<std::uint8_t> buf;
        constexpr std::size_t kChunk = 1 << 16;
        buf.reserve(kChunk * 9);
        for (std::size_t i = 0; i < records.size(); ++i) {
            put_le(buf, records[i].timestamp_ps);
            if (!header.merged_flag)
                buf.push_back(records[i].detector_id);
            if (buf.size() >= kChunk * 8 || i + 1 == records.size()) {
                out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
                buf.clear();
            }
        }
        if (!out)
            throw Error(ErrorCode::Io, "write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec)
        throw Error(ErrorCode::Io, "cannot move " + tmp.string() + " into place: " + ec.message());
}

TagReader::TagReader(const fs::path& path) : in_(path, std::ios::binary)
{
    if (!in_)
        throw Error(ErrorCode::Io, "cannot open " + path.string());
    std::error_code ec;
    const std::uintmax_t size = fs::file_size(path, ec);
    if (ec)
        throw Error(ErrorCode::Io, "cannot stat " + path.string());

    std::array<std::uint8_t, kHeaderSize> head{};
    in_.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
    header_ = decode_header(std::span<const std::uint8_t>(head.data(), static_cast<std::size_t>(in_.gcount())));

    const std::uintmax_t body = size - kHeaderSize;
    const std::size_t rs = header_.record_size();
    if (body % rs != 0)
        throw Error(ErrorCode::TruncatedFile, path.string() + " ends inside a record");
    if (body / rs != header_.record_count)
        throw Error(ErrorCode::CountMismatch, path.string() + " holds " + std::to_string(body / rs) +
                                                  " records, header says " + std::to_string(header_.record_count));
    remaining_ = header_.record_count;
}

std::size_t TagReader::read_chunk(std::vector<TagRecord>& out, std::size_t max_records)
{
    const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(remaining_, max_records));
    if (n == 0)
        return 0;
    const std::size_t rs = header_.record_size();
    std::vector<std::uint8_t> buf(n * rs);
    in_.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in_.gcount()) != buf.size())
        throw Error(ErrorCode::TruncatedFile, "unexpected end of tag data");

    out.reserve(out.size() + n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* p = buf.data() + i * rs;
        TagRecord rec{get_le<std::uint64_t>(p), header_.merged_flag ? std::uint8_t{0} : p[8]};
        if (rec.detector_id > 1)
            throw Error(ErrorCode::BadRecord, "detector id must be 0 or 1");
        if (!first_ && rec.timestamp_ps < last_timestamp_)
            throw Error(ErrorCode::UnsortedInput, "timestamps decrease inside the file");
        first_ = false;
        last_timestamp_ = rec.timestamp_ps;
        out.push_back(rec);
    }
    remaining_ -= n;
    return n;
}

std::pair<TagFileHeader, std::vector<TagRecord>> read_stream(const fs::path& path)
{
    TagReader reader(path);
    std::vector<TagRecord> records;
    records.reserve(static_cast<std::size_t>(reader.header().record_count));
    while (reader.read_chunk(records, 1 << 20) > 0) {
    }
    return {reader.header(), std::move(records)};
}

std::vector<TagRecord> to_records(const TagStream& stream)
{
    std::vector<TagRecord> out;
    out.reserve(stream.size());
    for (const DetectionRecord& r : stream) {
        if (r.timestamp_ps < 0)
            throw Error(ErrorCode::BadRecord, "negative timestamp");
        out.push_back({static_cast<std::uint64_t>(r.timestamp_ps), r.detector_id});
    }
    return out;
}

std::vector<TagRecord> to_records(const MergedTagStream& stream)
{
    std::vector<TagRecord> out;
    out.reserve(stream.size());
    for (std::int64_t t : stream.timestamps) {
        if (t < 0)
            throw Error(ErrorCode::BadRecord, "negative timestamp");
        out.push_back({static_cast<std::uint64_t>(t), 0});
    }
    return out;
}

TagStream to_stream(std::span<const TagRecord> records)
{
    TagStream out;
    out.reserve(records.size());
    for (const TagRecord& r : records) {
        DetectionRecord rec;
        rec.timestamp_ps = static_cast<std::int64_t>(r.timestamp_ps);
        rec.detector_id = r.detector_id;
        out.push_back(rec);
    }
    return out;
}

void write_tags(const fs::path& path, UserId user, const TagStream& stream, std::uint64_t duration_ps)
{
    const auto records = to_records(stream);
    TagFileHeader h;
    h.user_id = static_cast<std::uint16_t>(user);
    h.merged_flag = 0;
    h.record_count = records.size();
    h.duration_ps = duration_ps;
    write_stream(path, h, records);
}

void write_merged(const fs::path& path, const MergedTagStream& stream, std::uint64_t duration_ps)
{
    const auto records = to_records(stream);
    TagFileHeader h;
    h.user_id = static_cast<std::uint16_t>(stream.user);
    h.merged_flag = 1;
    h.record_count = records.size();
    h.duration_ps = duration_ps;
    write_stream(path, h, records);
}

void export_csv(std::ostream& os, const TagFileHeader& header, std::span<const TagRecord> records)
{
    os << (header.merged_flag ? "timestamp_ps\n" : "timestamp_ps,detector_id\n");
    for (const TagRecord& r : records) {
        os << r.timestamp_ps;
        if (!header.merged_flag)
            os << ',' << static_cast<int>(r.detector_id);
        os << '\n';
    }
}

}  // namespace qnet::tagio
