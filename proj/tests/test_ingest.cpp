#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fragtrack/ingest.hpp"

#include <filesystem>
#include <fstream>

using namespace fragtrack;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("fragtrack_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

GrayImage constant_frame(int w, int h, std::uint8_t value) {
  GrayImage img(h, w);
  img.setConstant(value);
  return img;
}

}  // namespace

TEST_CASE("pgm round trip and directory load") {
  const auto dir = temp_dir("pgm");
  for (int f = 0; f < 4; ++f) {
    GrayImage img = constant_frame(6, 5, static_cast<std::uint8_t>(10 * f));
    img(2, 3) = 200;
    char name[16];
    std::snprintf(name, sizeof(name), "%04d.pgm", f);
    write_pgm(dir / name, img);
  }
  SegmentationParams params;
  const FrameSequence seq = load_frame_sequence(dir, params);
  CHECK(seq.frame_count() == 4);
  CHECK(seq.width() == 6);
  CHECK(seq.height() == 5);
  CHECK(seq.source() == SequenceSource::pgm_directory);
  CHECK(seq.frame(2)(2, 3) == 200);
  CHECK(seq.frame(1)(0, 0) == 10);
}

TEST_CASE("raw file header declares the sequence") {
  const auto dir = temp_dir("raw");
  std::vector<GrayImage> frames;
  for (int f = 0; f < 10; ++f) frames.push_back(constant_frame(32, 32, 7));
  write_raw_sequence(dir / "video.ftrk", frames);
  SegmentationParams params;
  const FrameSequence seq = load_frame_sequence(dir / "video.ftrk", params);
  CHECK(seq.frame_count() == 10);
  CHECK(seq.width() == 32);
  CHECK(seq.height() == 32);
  CHECK(seq.source() == SequenceSource::raw_file);
  CHECK(seq.frame(9)(31, 31) == 7);
}

TEST_CASE("raw file shorter than its header is rejected") {
  const auto dir = temp_dir("rawbad");
  std::vector<GrayImage> frames{constant_frame(8, 8, 1)};
  write_raw_sequence(dir / "video.ftrk", frames);
  // Corrupt the count to claim more frames than the file holds.
  std::fstream f(dir / "video.ftrk",
                 std::ios::binary | std::ios::in | std::ios::out);
  f.seekp(4);
  const std::uint8_t big[4] = {99, 0, 0, 0};
  f.write(reinterpret_cast<const char*>(big), 4);
  f.close();
  SegmentationParams params;
  CHECK_THROWS_AS(load_frame_sequence(dir / "video.ftrk", params), IngestError);
}

TEST_CASE("background is the mean of strided frames") {
  const auto dir = temp_dir("bg");
  GrayImage a = constant_frame(4, 4, 10);
  GrayImage b = constant_frame(4, 4, 30);
  write_pgm(dir / "0000.pgm", a);
  write_pgm(dir / "0001.pgm", b);
  SegmentationParams params;
  const FrameSequence seq = load_frame_sequence(dir, params);
  const ImageF bg = compute_background(seq, 1);
  CHECK(bg(0, 0) == doctest::Approx(20.0));

  // Single frame: the background equals the frame.
  const auto dir1 = temp_dir("bg1");
  write_pgm(dir1 / "0000.pgm", a);
  const FrameSequence seq1 = load_frame_sequence(dir1, params);
  CHECK(compute_background(seq1, 3)(2, 2) == doctest::Approx(10.0));
}

TEST_CASE("segment_frame groups dark pixels by 4-connectivity") {
  const auto dir = temp_dir("seg");
  GrayImage img = constant_frame(5, 5, 200);
  img(1, 1) = 10;
  img(1, 2) = 12;  // adjacent: one blob of area 2
  img(3, 4) = 11;  // isolated single pixel
  write_pgm(dir / "0000.pgm", img);
  SegmentationParams params;
  params.min_intensity = 0;
  params.max_intensity = 60;
  params.min_area = 1;
  params.background_sample_stride = 1;
  const FrameSequence seq = load_frame_sequence(dir, params);
  auto blobs = segment_frame(seq, 0, params);
  REQUIRE(blobs.size() == 2);
  CHECK(blobs[0].area() == 2);
  CHECK(blobs[0].centroid.x() == doctest::Approx(1.5));
  CHECK(blobs[0].centroid.y() == doctest::Approx(1.0));
  CHECK(blobs[1].area() == 1);

  SUBCASE("min_area filters the small components") {
    params.min_area = 3;
    CHECK(segment_frame(seq, 0, params).empty());
  }
  SUBCASE("area 2 passes a min_area of 2") {
    params.min_area = 2;
    CHECK(segment_frame(seq, 0, params).size() == 1);
  }
}

TEST_CASE("roi excludes pixels outside the polygon") {
  const auto dir = temp_dir("roi");
  GrayImage img = constant_frame(8, 8, 200);
  img(1, 6) = 5;  // dark pixel outside the ROI
  write_pgm(dir / "0000.pgm", img);
  SegmentationParams params;
  params.max_intensity = 60;
  params.background_sample_stride = 1;
  params.roi = make_polygon_mask(
      8, 8, {Vec2(-0.5, -0.5), Vec2(4.2, -0.5), Vec2(4.2, 7.5), Vec2(-0.5, 7.5)});
  const FrameSequence seq = load_frame_sequence(dir, params);
  CHECK(segment_frame(seq, 0, params).empty());
}

TEST_CASE("multiplicative normalization cancels per-frame gain") {
  // Two sequences, identical except frame 1 is scaled by c = 1.35 (without
  // clipping). The reference intensity comes from the stride-2 subsample
  // {frame 0}, so the scale cancels exactly and segmentation is unchanged.
  SegmentationParams params;
  params.max_intensity = 80;
  params.background_sample_stride = 2;
  auto build = [&](double gain) {
    const auto dir = temp_dir(gain == 1.0 ? "norm1" : "norm2");
    GrayImage ref = constant_frame(6, 6, 120);
    write_pgm(dir / "0000.pgm", ref);
    GrayImage frame = constant_frame(6, 6, 120);
    frame(2, 2) = 40;
    frame(2, 3) = 44;
    GrayImage scaled(6, 6);
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x)
        scaled(y, x) = static_cast<std::uint8_t>(std::lround(frame(y, x) * gain));
    write_pgm(dir / "0001.pgm", scaled);
    const FrameSequence seq = load_frame_sequence(dir, params);
    return segment_frame(seq, 1, params);
  };
  const auto base = build(1.0);
  const auto scaled = build(1.35);
  REQUIRE(base.size() == scaled.size());
  REQUIRE(base.size() == 1);
  CHECK(base[0].pixels == scaled[0].pixels);
}

TEST_CASE("blob stream round trip") {
  std::vector<std::vector<Blob>> frames(2);
  Blob a;
  a.frame = 0;
  a.pixels = {pack_pixel(3, 4), pack_pixel(4, 4), pack_pixel(3, 5)};
  finalize_blob_geometry(a);
  a.image.resize(a.bbox.height(), a.bbox.width());
  a.image.setZero();
  a.image(0, 0) = 90;
  a.image(0, 1) = 100;
  a.image(1, 0) = 110;
  frames[0].push_back(a);
  Blob b = a;
  b.frame = 1;
  frames[1].push_back(b);

  const auto dir = temp_dir("stream");
  write_blob_stream(dir / "video.jsonl", frames);
  const auto loaded = read_blob_stream(dir / "video.jsonl");
  REQUIRE(loaded.size() == 2);
  REQUIRE(loaded[0].size() == 1);
  CHECK(loaded[0][0].pixels == a.pixels);
  CHECK(loaded[0][0].image(0, 1) == 100);
  CHECK(loaded[0][0].centroid.x() == doctest::Approx(a.centroid.x()));

  SegmentationParams params;
  const FrameSequence seq = load_frame_sequence(dir / "video.jsonl", params);
  CHECK(seq.source() == SequenceSource::blob_stream);
  CHECK(seq.frame_count() == 2);
  // Segmentation is bypassed: the stream's blobs come back as segmented.
  const auto blobs = segment_frame(seq, 0, params);
  REQUIRE(blobs.size() == 1);
  CHECK(blobs[0].pixels == a.pixels);
}

TEST_CASE("overlap is symmetric and detects shared pixels") {
  Blob a, b, c;
  a.pixels = {pack_pixel(0, 0), pack_pixel(0, 1)};
  b.pixels = {pack_pixel(0, 1), pack_pixel(1, 1)};
  c.pixels = {pack_pixel(5, 5)};
  finalize_blob_geometry(a);
  finalize_blob_geometry(b);
  finalize_blob_geometry(c);
  CHECK(overlap(a, b));
  CHECK(overlap(b, a));
  CHECK_FALSE(overlap(a, c));
  CHECK(overlap(a, a));
}
