#include "fragtrack/ingest.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fragtrack {
namespace {

using nlohmann::json;

constexpr char kRawMagic[4] = {'F', 'T', 'R', 'K'};

std::string base64_encode(const std::uint8_t* data, std::size_t len) {
  static const char table[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (std::size_t i = 0; i < len; i += 3) {
    std::uint32_t v = static_cast<std::uint32_t>(data[i]) << 16;
    if (i + 1 < len) v |= static_cast<std::uint32_t>(data[i + 1]) << 8;
    if (i + 2 < len) v |= static_cast<std::uint32_t>(data[i + 2]);
    out.push_back(table[(v >> 18) & 63]);
    out.push_back(table[(v >> 12) & 63]);
    out.push_back(i + 1 < len ? table[(v >> 6) & 63] : '=');
    out.push_back(i + 2 < len ? table[v & 63] : '=');
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  auto value_of = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  std::uint32_t acc = 0;
  int bits = 0;
  for (const char c : text) {
    if (c == '=') break;
    const int v = value_of(c);
    if (v < 0) throw IngestError("invalid base64 payload");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
    }
  }
  return out;
}

void check_dims(int width, int height) {
  if (width <= 0 || height <= 0)
    throw IngestError("frame dimensions must be positive");
  if (width > 0xffff || height > 0xffff)
    throw IngestError("frames larger than 65535 px per side are unsupported");
}

// Box-filter downsample by an arbitrary factor in (0, 1].
GrayImage downsample(const GrayImage& in, double factor) {
  if (factor >= 1.0) return in;
  const int oh = std::max<int>(1, static_cast<int>(std::lround(in.rows() * factor)));
  const int ow = std::max<int>(1, static_cast<int>(std::lround(in.cols() * factor)));
  GrayImage out(oh, ow);
  const double sy = static_cast<double>(in.rows()) / oh;
  const double sx = static_cast<double>(in.cols()) / ow;
  for (int y = 0; y < oh; ++y) {
    const int y0 = static_cast<int>(std::floor(y * sy));
    const int y1 = std::min<int>(static_cast<int>(std::ceil((y + 1) * sy)),
                                 static_cast<int>(in.rows()));
    for (int x = 0; x < ow; ++x) {
      const int x0 = static_cast<int>(std::floor(x * sx));
      const int x1 = std::min<int>(static_cast<int>(std::ceil((x + 1) * sx)),
                                   static_cast<int>(in.cols()));
      double acc = 0.0;
      for (int yy = y0; yy < y1; ++yy)
        for (int xx = x0; xx < x1; ++xx) acc += in(yy, xx);
      const double cnt = static_cast<double>((y1 - y0) * (x1 - x0));
      out(y, x) = static_cast<std::uint8_t>(
          std::clamp(std::lround(acc / cnt), 0L, 255L));
    }
  }
  return out;
}

int pgm_next_value(std::istream& in) {
  // Skips whitespace and '#' comments between header tokens.
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int value = -1;
  in >> value;
  return value;
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5")
    throw IngestError(path.string() + ": only binary grayscale (P5) supported");
  const int width = pgm_next_value(in);
  const int height = pgm_next_value(in);
  const int maxval = pgm_next_value(in);
  if (!in || width <= 0 || height <= 0)
    throw IngestError(path.string() + ": malformed PGM header");
  if (maxval <= 0 || maxval > 255)
    throw IngestError(path.string() + ": only 8-bit PGM supported");
  in.get();  // single whitespace after maxval
  GrayImage img(height, width);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(width));
  for (int y = 0; y < height; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), width);
    if (!in) throw IngestError(path.string() + ": truncated PGM data");
    for (int x = 0; x < width; ++x) img(y, x) = row[static_cast<std::size_t>(x)];
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write " + path.string());
  out << "P5\n" << image.cols() << " " << image.rows() << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(image.cols()));
  for (int y = 0; y < image.rows(); ++y) {
    for (int x = 0; x < image.cols(); ++x) row[static_cast<std::size_t>(x)] = image(y, x);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
}

void write_raw_sequence(const std::filesystem::path& path,
                        const std::vector<GrayImage>& frames) {
  if (frames.empty()) throw IngestError("raw sequence needs at least one frame");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write " + path.string());
  const std::uint32_t count = static_cast<std::uint32_t>(frames.size());
  const std::uint32_t width = static_cast<std::uint32_t>(frames[0].cols());
  const std::uint32_t height = static_cast<std::uint32_t>(frames[0].rows());
  out.write(kRawMagic, 4);
  auto put_u32 = [&out](std::uint32_t v) {
    const std::uint8_t b[4] = {static_cast<std::uint8_t>(v & 0xff),
                               static_cast<std::uint8_t>((v >> 8) & 0xff),
                               static_cast<std::uint8_t>((v >> 16) & 0xff),
                               static_cast<std::uint8_t>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  put_u32(count);
  put_u32(width);
  put_u32(height);
  for (const GrayImage& f : frames) {
    if (f.cols() != frames[0].cols() || f.rows() != frames[0].rows())
      throw IngestError("inconsistent frame dimensions in raw sequence");
    for (int y = 0; y < f.rows(); ++y)
      for (int x = 0; x < f.cols(); ++x)
        out.put(static_cast<char>(f(y, x)));
  }
}

void write_blob_stream(const std::filesystem::path& path,
                       const std::vector<std::vector<Blob>>& frames) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write " + path.string());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    json record;
    record["frame"] = f;
    json blobs = json::array();
    for (const Blob& b : frames[f]) {
      json jb;
      json pixels = json::array();
      for (const PixelKey k : b.pixels)
        pixels.push_back(json::array({pixel_x(k), pixel_y(k)}));
      jb["pixels"] = std::move(pixels);
      std::vector<std::uint8_t> bytes;
      bytes.reserve(static_cast<std::size_t>(b.image.size()));
      for (int y = 0; y < b.image.rows(); ++y)
        for (int x = 0; x < b.image.cols(); ++x) bytes.push_back(b.image(y, x));
      jb["image"] = base64_encode(bytes.data(), bytes.size());
      blobs.push_back(std::move(jb));
    }
    record["blobs"] = std::move(blobs);
    out << record.dump() << "\n";
  }
}

std::vector<std::vector<Blob>> read_blob_stream(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path.string());
  std::vector<std::vector<Blob>> frames;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::exception& e) {
      throw IngestError("blob stream parse error: " + std::string(e.what()));
    }
    const int frame = record.at("frame").get<int>();
    if (frame != static_cast<int>(frames.size()))
      throw IngestError("blob stream frames must be contiguous from 0");
    std::vector<Blob> blobs;
    for (const json& jb : record.at("blobs")) {
      Blob b;
      b.frame = frame;
      for (const json& jp : jb.at("pixels")) {
        const int x = jp.at(0).get<int>();
        const int y = jp.at(1).get<int>();
        if (x < 0 || y < 0 || x > 0xffff || y > 0xffff)
          throw IngestError("blob stream pixel out of range");
        b.pixels.push_back(pack_pixel(x, y));
      }
      if (b.pixels.empty()) throw IngestError("blob stream blob with no pixels");
      finalize_blob_geometry(b);
      const std::vector<std::uint8_t> bytes =
          base64_decode(jb.at("image").get<std::string>());
      const int w = b.bbox.width();
      const int h = b.bbox.height();
      if (static_cast<int>(bytes.size()) != w * h)
        throw IngestError("blob stream image payload does not match bbox");
      b.image.resize(h, w);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          b.image(y, x) = bytes[static_cast<std::size_t>(y) * w + x];
      blobs.push_back(std::move(b));
    }
    // Keep segmentation's ordering contract: row-major first pixel.
    std::sort(blobs.begin(), blobs.end(),
              [](const Blob& a, const Blob& b) {
                return a.pixels.front() < b.pixels.front();
              });
    frames.push_back(std::move(blobs));
  }
  return frames;
}

GrayImage FrameSequence::load_raw_frame(int index) const {
  std::ifstream in(raw_path_, std::ios::binary);
  if (!in) throw IngestError("cannot open " + raw_path_.string());
  const std::streamoff offset =
      16 + static_cast<std::streamoff>(index) * raw_width_ * raw_height_;
  in.seekg(offset);
  GrayImage img(raw_height_, raw_width_);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(raw_width_));
  for (int y = 0; y < raw_height_; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), raw_width_);
    if (!in) throw IngestError(raw_path_.string() + ": truncated frame data");
    for (int x = 0; x < raw_width_; ++x) img(y, x) = row[static_cast<std::size_t>(x)];
  }
  return img;
}

GrayImage FrameSequence::frame(int index) const {
  if (index < 0 || index >= frame_count_)
    throw IngestError("frame index out of range");
  switch (source_) {
    case SequenceSource::pgm_directory: {
      GrayImage img = read_pgm(files_[static_cast<std::size_t>(index)]);
      if (img.cols() != raw_width_ || img.rows() != raw_height_)
        throw IngestError("inconsistent frame dimensions in " +
                          files_[static_cast<std::size_t>(index)].string());
      return downsample(img, reduction_);
    }
    case SequenceSource::raw_file:
      return downsample(load_raw_frame(index), reduction_);
    case SequenceSource::blob_stream: {
      GrayImage img(height_, width_);
      img.setZero();
      for (const Blob& b : stream_[static_cast<std::size_t>(index)]) {
        for (const PixelKey k : b.pixels) {
          const int x = pixel_x(k);
          const int y = pixel_y(k);
          img(y, x) = b.image(y - b.bbox.min_y, x - b.bbox.min_x);
        }
      }
      return img;
    }
  }
  throw IngestError("unreachable");
}

const std::vector<Blob>& FrameSequence::stream_blobs(int frame) const {
  if (source_ != SequenceSource::blob_stream)
    throw IngestError("stream_blobs on a pixel-backed sequence");
  return stream_.at(static_cast<std::size_t>(frame));
}

FrameSequence load_frame_sequence(const std::filesystem::path& path,
                                  const SegmentationParams& params) {
  params.validate();
  FrameSequence seq;
  seq.reduction_ = params.resolution_reduction;

  if (std::filesystem::is_directory(path)) {
    seq.source_ = SequenceSource::pgm_directory;
    for (const auto& entry : std::filesystem::directory_iterator(path)) {
      if (entry.path().extension() == ".pgm") seq.files_.push_back(entry.path());
    }
    if (seq.files_.empty())
      throw IngestError("no .pgm frames in " + path.string());
    std::sort(seq.files_.begin(), seq.files_.end());
    const GrayImage first = read_pgm(seq.files_[0]);
    seq.raw_width_ = static_cast<int>(first.cols());
    seq.raw_height_ = static_cast<int>(first.rows());
    seq.frame_count_ = static_cast<int>(seq.files_.size());
  } else {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open " + path.string());
    char magic[4] = {0, 0, 0, 0};
    in.read(magic, 4);
    if (in && std::memcmp(magic, kRawMagic, 4) == 0) {
      seq.source_ = SequenceSource::raw_file;
      seq.raw_path_ = path;
      std::uint8_t b[12];
      in.read(reinterpret_cast<char*>(b), 12);
      if (!in) throw IngestError(path.string() + ": truncated raw header");
      auto u32 = [&b](int o) {
        return static_cast<std::uint32_t>(b[o]) |
               (static_cast<std::uint32_t>(b[o + 1]) << 8) |
               (static_cast<std::uint32_t>(b[o + 2]) << 16) |
               (static_cast<std::uint32_t>(b[o + 3]) << 24);
      };
      seq.frame_count_ = static_cast<int>(u32(0));
      seq.raw_width_ = static_cast<int>(u32(4));
      seq.raw_height_ = static_cast<int>(u32(8));
      if (seq.frame_count_ <= 0)
        throw IngestError(path.string() + ": raw file declares no frames");
      const auto expected = static_cast<std::uintmax_t>(16) +
                            static_cast<std::uintmax_t>(seq.frame_count_) *
                                seq.raw_width_ * seq.raw_height_;
      if (std::filesystem::file_size(path) < expected)
        throw IngestError(path.string() + ": raw file shorter than header claims");
    } else {
      seq.source_ = SequenceSource::blob_stream;
      if (params.resolution_reduction != 1.0)
        throw IngestError("resolution reduction is not applicable to blob streams");
      seq.stream_ = read_blob_stream(path);
      if (seq.stream_.empty()) throw IngestError("empty blob stream");
      seq.frame_count_ = static_cast<int>(seq.stream_.size());
      int max_x = 0, max_y = 0;
      for (const auto& frame : seq.stream_)
        for (const Blob& b : frame) {
          max_x = std::max(max_x, b.bbox.max_x);
          max_y = std::max(max_y, b.bbox.max_y);
        }
      seq.width_ = max_x + 1;
      seq.height_ = max_y + 1;
      seq.reference_intensity_ = 0.0;
      check_dims(seq.width_, seq.height_);
      return seq;
    }
  }

  check_dims(seq.raw_width_, seq.raw_height_);
  {
    GrayImage probe = seq.source_ == SequenceSource::raw_file
                          ? seq.load_raw_frame(0)
                          : read_pgm(seq.files_[0]);
    probe = downsample(probe, seq.reduction_);
    seq.width_ = static_cast<int>(probe.cols());
    seq.height_ = static_cast<int>(probe.rows());
  }

  // Reference intensity over the same subsample used for the background.
  double acc = 0.0;
  long count = 0;
  for (int f = 0; f < seq.frame_count_; f += params.background_sample_stride) {
    const GrayImage img = seq.frame(f);
    acc += img.cast<double>().sum();
    count += img.size();
  }
  seq.reference_intensity_ = count > 0 ? acc / static_cast<double>(count) : 0.0;
  return seq;
}

ImageF compute_background(const FrameSequence& seq, int stride) {
  if (stride < 1) throw IngestError("background stride must be >= 1");
  if (seq.frame_count() == 0) throw IngestError("empty sequence");
  Eigen::ArrayXXd acc(seq.height(), seq.width());
  acc.setZero();
  int count = 0;
  for (int f = 0; f < seq.frame_count(); f += stride) {
    acc += seq.frame(f).cast<double>();
    ++count;
  }
  return (acc / count).cast<float>();
}

ImageF normalized_frame(const FrameSequence& seq, int frame_index) {
  const GrayImage raw = seq.frame(frame_index);
  ImageF img = raw.cast<float>();
  const double frame_mean = img.cast<double>().mean();
  const double ref = seq.reference_intensity();
  if (ref > 0.0 && frame_mean > 0.0) {
    const float gain = static_cast<float>(ref / frame_mean);
    img = (img * gain).min(255.0f).max(0.0f);
  }
  return img;
}

std::vector<Blob> segment_frame(const FrameSequence& seq, int frame_index,
                                const SegmentationParams& params,
                                const ImageF* background) {
  params.validate();
  if (seq.source() == SequenceSource::blob_stream)
    return seq.stream_blobs(frame_index);

  ImageF img = normalized_frame(seq, frame_index);
  if (params.subtract_background) {
    if (background == nullptr)
      throw IngestError("subtract_background set but no background given");
    img = (img - *background).abs();
  }

  const int w = seq.width();
  const int h = seq.height();
  if (params.roi && (params.roi->rows() != h || params.roi->cols() != w))
    throw IngestError("ROI mask dimensions do not match frames");

  MaskImage acceptable(h, w);
  const float lo = static_cast<float>(params.min_intensity);
  const float hi = static_cast<float>(params.max_intensity);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const bool in_roi = !params.roi || (*params.roi)(y, x);
      acceptable(y, x) = in_roi && img(y, x) >= lo && img(y, x) <= hi;
    }

  // 4-connected components, seeded in row-major scan order so blob order is
  // the order of each component's first pixel.
  std::vector<Blob> blobs;
  MaskImage visited(h, w);
  visited.setConstant(false);
  std::vector<PixelKey> stack;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!acceptable(y, x) || visited(y, x)) continue;
      Blob blob;
      blob.frame = frame_index;
      stack.clear();
      stack.push_back(pack_pixel(x, y));
      visited(y, x) = true;
      while (!stack.empty()) {
        const PixelKey k = stack.back();
        stack.pop_back();
        blob.pixels.push_back(k);
        const int px = pixel_x(k);
        const int py = pixel_y(k);
        const int nx[4] = {px - 1, px + 1, px, px};
        const int ny[4] = {py, py, py - 1, py + 1};
        for (int d = 0; d < 4; ++d) {
          if (nx[d] < 0 || nx[d] >= w || ny[d] < 0 || ny[d] >= h) continue;
          if (!acceptable(ny[d], nx[d]) || visited(ny[d], nx[d])) continue;
          visited(ny[d], nx[d]) = true;
          stack.push_back(pack_pixel(nx[d], ny[d]));
        }
      }
      const int area = static_cast<int>(blob.pixels.size());
      if (area < params.min_area || area > params.max_area) continue;
      finalize_blob_geometry(blob);
      blob.image.resize(blob.bbox.height(), blob.bbox.width());
      blob.image.setZero();
      for (const PixelKey k : blob.pixels) {
        const int bx = pixel_x(k) - blob.bbox.min_x;
        const int by = pixel_y(k) - blob.bbox.min_y;
        blob.image(by, bx) = static_cast<std::uint8_t>(
            std::clamp<long>(std::lround(img(pixel_y(k), pixel_x(k))), 0, 255));
      }
      blobs.push_back(std::move(blob));
    }
  }
  return blobs;
}

}  // namespace fragtrack
