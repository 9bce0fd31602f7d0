#pragma once

#include "fragtrack/cascade.hpp"

#include <filesystem>
#include <map>

namespace fragtrack {

struct SpeedModel {
  double v_max = 0.0;  // 99th percentile of per-step speeds
};

struct PostprocParams {
  double percentile = 99.0;       // nearest-rank percentile for v_max
  double speed_factor = 2.0;      // realistic iff s <= speed_factor * v_max
  double fixed_p2_threshold = 0.9;  // residual identities at/above are immutable
  int erosion_passes = 5;
};

// Nearest-rank percentile of every consecutive-centroid speed over all
// individual fragments. Throws when there are no speeds to rank.
SpeedModel fit_speed_model(const std::vector<Fragment>& fragments,
                           double percentile = 99.0);

// d(c_1e, c_2s) / (f_2s - f_1e); f1 must end before f2 starts.
double boundary_speed(const Fragment& f1, const Fragment& f2);

struct CorrectionStats {
  int reidentified = 0;
  int unidentified = 0;
};

// Speed-model pass over identified fragments: fragments whose boundary
// speeds are unrealistic get re-identified against the available identities
// (coexistence exclusion + speed gate + P2 gate), or lose their identity.
// Fragments are visited moving away from the core of the first global
// fragment, first the ones ending before it, then the rest.
CorrectionStats correct_unrealistic(const std::vector<Fragment>& fragments,
                                    std::vector<FragmentIdentity>& states,
                                    const std::vector<std::vector<int>>& coexisting,
                                    const SpeedModel& speed,
                                    int n_animals, int core_frame,
                                    const PostprocParams& params);

// Centroids recovered inside crossing blobs: per identity, frame -> position.
using CrossingPoints = std::vector<std::map<int, Vec2>>;

// Splits crossing blobs by iterated 3x3 erosion and links the parts to the
// identified individuals entering and leaving the crossing, by pixel overlap
// first and by a speed-gated nearest centroid otherwise.
CrossingPoints resolve_crossings(const std::vector<std::vector<Blob>>& frames,
                                 const FragmentSet& set,
                                 const std::vector<FragmentIdentity>& states,
                                 const SpeedModel& speed, int n_animals,
                                 const PostprocParams& params);

// frames x individuals x 2 centroid arrays: `without` holds identified
// individual images only (gaps are NaN); `with` adds crossing resolutions,
// linear interpolation across interior gaps, and held endpoints.
struct Trajectories {
  Eigen::MatrixXd x_without, y_without;
  Eigen::MatrixXd x_with, y_with;

  int frames() const { return static_cast<int>(x_without.rows()); }
  int individuals() const { return static_cast<int>(x_without.cols()); }
};

Trajectories assemble_trajectories(int frame_count, int n_animals,
                                   const std::vector<Fragment>& fragments,
                                   const std::vector<FragmentIdentity>& states,
                                   const CrossingPoints& crossing_points);

// Image-weighted mean of the assigned-identity P2 over identified individual
// fragments; accumulated fragments contribute P2 = 1.
double estimated_accuracy(const std::vector<Fragment>& fragments,
                          const std::vector<FragmentIdentity>& states);

// trajectories.csv / trajectories_wo_gaps.csv: header frame,identity,x,y
// with missing coordinates as empty fields. Identities are 1-based in files.
void write_trajectories_csv(const std::filesystem::path& path,
                            const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

// Binary erosion of a pixel set with a 3x3 structuring element.
std::vector<PixelKey> erode_pixels(const std::vector<PixelKey>& pixels);

// 4-connected components of a pixel set.
std::vector<std::vector<PixelKey>> pixel_components(
    const std::vector<PixelKey>& pixels);

}  // namespace fragtrack
