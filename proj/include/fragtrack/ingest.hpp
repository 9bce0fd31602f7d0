#pragma once

#include "fragtrack/types.hpp"

#include <filesystem>
#include <memory>

namespace fragtrack {

enum class SequenceSource { pgm_directory, raw_file, blob_stream };

// A grayscale frame sequence backed by a PGM directory, a raw "FTRK" file or
// a pre-segmented blob stream. Pixel-backed sources load frames on demand;
// blob streams keep their blobs in memory and synthesize frames by pasting
// the blob crops onto a zero canvas.
class FrameSequence {
 public:
  int frame_count() const { return frame_count_; }
  int width() const { return width_; }
  int height() const { return height_; }
  SequenceSource source() const { return source_; }
  double resolution_reduction() const { return reduction_; }

  // Mean intensity over the stride-subsampled frames, cached at load time.
  // Used as the reference for multiplicative per-frame normalization.
  double reference_intensity() const { return reference_intensity_; }

  GrayImage frame(int index) const;

  // Blob-stream sources only.
  const std::vector<Blob>& stream_blobs(int frame) const;

 private:
  friend FrameSequence load_frame_sequence(const std::filesystem::path&,
                                           const SegmentationParams&);

  GrayImage load_raw_frame(int index) const;

  SequenceSource source_ = SequenceSource::pgm_directory;
  int frame_count_ = 0;
  int width_ = 0;
  int height_ = 0;
  double reduction_ = 1.0;
  double reference_intensity_ = 0.0;
  std::vector<std::filesystem::path> files_;        // pgm_directory
  std::filesystem::path raw_path_;                  // raw_file
  int raw_width_ = 0, raw_height_ = 0;              // pre-reduction dims
  std::vector<std::vector<Blob>> stream_;           // blob_stream
};

// Detects the source kind from the path: a directory of .pgm files, a file
// starting with the FTRK magic, or a JSON-lines blob stream.
FrameSequence load_frame_sequence(const std::filesystem::path& path,
                                  const SegmentationParams& params);

// Per-pixel mean over frames {0, stride, 2*stride, ...}.
ImageF compute_background(const FrameSequence& seq, int stride);

// Thresholds the (normalized, optionally background-subtracted) frame inside
// the ROI and groups acceptable pixels by 4-connectivity. Components outside
// [min_area, max_area] are discarded; blobs come back in row-major scan order
// of their first pixel.
std::vector<Blob> segment_frame(const FrameSequence& seq, int frame_index,
                                const SegmentationParams& params,
                                const ImageF* background = nullptr);

// The frame as seen by segmentation and image preprocessing: downsampled and
// multiplicatively normalized to the sequence reference intensity.
ImageF normalized_frame(const FrameSequence& seq, int frame_index);

// PGM (P5, 8-bit) io.
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

// Raw container: "FTRK" magic, u32 frame count, u32 width, u32 height
// (little-endian), then count*width*height bytes.
void write_raw_sequence(const std::filesystem::path& path,
                        const std::vector<GrayImage>& frames);

// Blob-stream JSON-lines: one record per frame,
// {"frame":k,"blobs":[{"pixels":[[x,y],...],"image":base64}]}.
void write_blob_stream(const std::filesystem::path& path,
                       const std::vector<std::vector<Blob>>& frames);
std::vector<std::vector<Blob>> read_blob_stream(
    const std::filesystem::path& path);

}  // namespace fragtrack
