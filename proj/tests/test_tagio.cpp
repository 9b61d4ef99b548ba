#include <doctest.h>

#include <fstream>
#include <sstream>

#include "qnet/error.hpp"
#include "qnet/tagio.hpp"
#include "support.hpp"

using namespace qnet;
using namespace qnet::tagio;
using qnet::test::TempDir;

namespace {

ErrorCode code_of(const std::function<void()>& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no qnet::Error thrown");
    return ErrorCode::Io;
}

std::vector<char> slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& p, const std::vector<char>& bytes)
{
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<TagRecord> sample_records()
{
    return {{0, 0}, {5, 1}, {5, 0}, {1'000'000'000'000ULL, 1}, {0xFFFF'FFFF'FFFFULL, 0}};
}

}  // namespace

TEST_CASE("header layout is 25 little-endian bytes")
{
    TagFileHeader h;
    h.user_id = 0x0102;
    h.merged_flag = 1;
    h.record_count = 0x0A0B0C0D;
    h.duration_ps = 60'000'000'000'000ULL;
    const auto bytes = encode_header(h);
    REQUIRE(bytes.size() == kHeaderSize);
    CHECK(bytes[0] == 'Q');
    CHECK(bytes[3] == '1');
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 0);
    CHECK(bytes[6] == 0x02);
    CHECK(bytes[7] == 0x01);
    CHECK(bytes[8] == 1);
    CHECK(bytes[9] == 0x0D);
    CHECK(bytes[12] == 0x0A);
    CHECK(decode_header(bytes) == h);
}

TEST_CASE("header decoding errors")
{
    auto bytes = encode_header(TagFileHeader{});
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK(code_of([&] { decode_header(bad_magic); }) == ErrorCode::BadMagic);
    CHECK(code_of([&] { decode_header(std::span(bytes).first(2)); }) == ErrorCode::BadMagic);
    CHECK(code_of([&] { decode_header(std::span(bytes).first(20)); }) == ErrorCode::TruncatedFile);
    auto bad_version = bytes;
    bad_version[4] = 9;
    CHECK(code_of([&] { decode_header(bad_version); }) == ErrorCode::BadVersion);
    auto bad_flag = bytes;
    bad_flag[8] = 2;
    CHECK(code_of([&] { decode_header(bad_flag); }) == ErrorCode::BadHeader);
}

TEST_CASE("raw round trip is lossless")
{
    TempDir dir("tagio_raw");
    const auto path = dir.path / "u.qnt";
    TagFileHeader h;
    h.user_id = 7;
    h.record_count = 5;
    h.duration_ps = 123;
    const auto recs = sample_records();
    write_stream(path, h, recs);
    CHECK(std::filesystem::file_size(path) == kHeaderSize + 5 * 9);
    CHECK_FALSE(std::filesystem::exists(dir.path / "u.qnt.tmp"));
    const auto [h2, r2] = read_stream(path);
    CHECK(h2 == h);
    CHECK(r2 == recs);
}

TEST_CASE("merged round trip drops detector ids")
{
    TempDir dir("tagio_merged");
    const auto path = dir.path / "m.qnt";
    TagFileHeader h;
    h.merged_flag = 1;
    h.record_count = 5;
    write_stream(path, h, sample_records());
    CHECK(std::filesystem::file_size(path) == kHeaderSize + 5 * 8);
    const auto [h2, r2] = read_stream(path);
    CHECK(h2.merged_flag == 1);
    REQUIRE(r2.size() == 5);
    for (std::size_t i = 0; i < r2.size(); ++i) {
        CHECK(r2[i].timestamp_ps == sample_records()[i].timestamp_ps);
        CHECK(r2[i].detector_id == 0);
    }
}

TEST_CASE("empty file round trip")
{
    TempDir dir("tagio_empty");
    const auto path = dir.path / "e.qnt";
    write_stream(path, TagFileHeader{}, {});
    const auto [h, r] = read_stream(path);
    CHECK(h.record_count == 0);
    CHECK(r.empty());
}

TEST_CASE("writer rejects bad input")
{
    TempDir dir("tagio_write");
    const auto path = dir.path / "w.qnt";
    TagFileHeader h;
    h.record_count = 2;
    const std::vector<TagRecord> unsorted{{10, 0}, {5, 0}};
    CHECK(code_of([&] { write_stream(path, h, unsorted); }) == ErrorCode::UnsortedInput);
    const std::vector<TagRecord> bad_det{{1, 0}, {2, 3}};
    CHECK(code_of([&] { write_stream(path, h, bad_det); }) == ErrorCode::BadRecord);
    const std::vector<TagRecord> one{{1, 0}};
    CHECK(code_of([&] { write_stream(path, h, one); }) == ErrorCode::CountMismatch);
    CHECK_FALSE(std::filesystem::exists(path));
    CHECK(code_of([&] { write_stream(dir.path / "missing" / "x.qnt", TagFileHeader{}, {}); }) == ErrorCode::Io);
}

TEST_CASE("reader detects corruption")
{
    TempDir dir("tagio_corrupt");
    const auto path = dir.path / "c.qnt";
    TagFileHeader h;
    h.record_count = 5;
    write_stream(path, h, sample_records());
    const auto good = slurp(path);

    auto truncated = good;
    truncated.resize(truncated.size() - 4);
    spit(path, truncated);
    CHECK(code_of([&] { read_stream(path); }) == ErrorCode::TruncatedFile);

    auto short_count = good;
    short_count.resize(short_count.size() - 9);
    spit(path, short_count);
    CHECK(code_of([&] { read_stream(path); }) == ErrorCode::CountMismatch);

    auto bad_det = good;
    bad_det[kHeaderSize + 8] = 5;
    spit(path, bad_det);
    CHECK(code_of([&] { read_stream(path); }) == ErrorCode::BadRecord);

    auto unsorted = good;
    unsorted[kHeaderSize + 9] = 9;   // second record timestamp becomes 9, third is 5
    spit(path, unsorted);
    CHECK(code_of([&] { read_stream(path); }) == ErrorCode::UnsortedInput);

    auto magic = good;
    magic[1] = 'Z';
    spit(path, magic);
    CHECK(code_of([&] { read_stream(path); }) == ErrorCode::BadMagic);

    spit(path, std::vector<char>(good.begin(), good.begin() + 10));
    CHECK(code_of([&] { read_stream(path); }) == ErrorCode::TruncatedFile);

    CHECK(code_of([&] { read_stream(dir.path / "absent.qnt"); }) == ErrorCode::Io);
}

TEST_CASE("chunked reader matches whole-file read")
{
    TempDir dir("tagio_chunk");
    const auto path = dir.path / "k.qnt";
    std::vector<TagRecord> recs;
    const auto ts = qnet::test::random_sorted(10'007, 1'000'000'000, 3);
    for (std::size_t i = 0; i < ts.size(); ++i)
        recs.push_back({static_cast<std::uint64_t>(ts[i]), static_cast<std::uint8_t>(i % 2)});
    TagFileHeader h;
    h.record_count = recs.size();
    write_stream(path, h, recs);

    TagReader reader(path);
    std::vector<TagRecord> all;
    std::size_t chunks = 0;
    while (reader.read_chunk(all, 1000) > 0)
        ++chunks;
    CHECK(chunks == 11);
    CHECK(all == recs);
}

TEST_CASE("stream conversions")
{
    TagStream s(3);
    s[0].timestamp_ps = 1;
    s[1].timestamp_ps = 4;
    s[1].detector_id = 1;
    s[2].timestamp_ps = 9;
    const auto recs = to_records(s);
    CHECK(recs == std::vector<TagRecord>{{1, 0}, {4, 1}, {9, 0}});
    const TagStream back = to_stream(recs);
    REQUIRE(back.size() == 3);
    CHECK(back[1].timestamp_ps == 4);
    CHECK(back[1].detector_id == 1);

    TagStream neg(1);
    neg[0].timestamp_ps = -1;
    CHECK(code_of([&] { to_records(neg); }) == ErrorCode::BadRecord);

    TempDir dir("tagio_conv");
    write_tags(dir.path / "t.qnt", 4, s, 1000);
    const auto [h, r] = read_stream(dir.path / "t.qnt");
    CHECK(h.user_id == 4);
    CHECK(h.duration_ps == 1000);
    CHECK(r == recs);

    MergedTagStream m{2, {3, 5, 8}};
    write_merged(dir.path / "m.qnt", m, 10);
    const auto [hm, rm] = read_stream(dir.path / "m.qnt");
    CHECK(hm.merged_flag == 1);
    CHECK(rm.size() == 3);
}

TEST_CASE("csv export")
{
    std::ostringstream raw;
    TagFileHeader h;
    export_csv(raw, h, std::vector<TagRecord>{{1, 0}, {2, 1}});
    CHECK(raw.str() == "timestamp_ps,detector_id\n1,0\n2,1\n");
    std::ostringstream merged;
    h.merged_flag = 1;
    export_csv(merged, h, std::vector<TagRecord>{{1, 0}, {2, 0}});
    CHECK(merged.str() == "timestamp_ps\n1\n2\n");
}
