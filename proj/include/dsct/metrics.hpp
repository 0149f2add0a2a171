#pragma once

#include "dsct/error.hpp"
#include "dsct/types.hpp"

#include <optional>
#include <vector>

namespace dsct {

// Pixel-space rectangle, [x0, x0+w) x [y0, y0+h).
struct RoiRect {
    int x0 = 0, y0 = 0, w = 0, h = 0;
};

struct RoiAnnulus {
    Scalar cx = 0, cy = 0; // pixels
    Scalar r_in = 0, r_out = 0;
};

struct MTFCurve {
    Vec frequency; // 1/mm, increasing from 0
    Vec mtf;       // normalized so mtf[0] == 1
    Scalar f_10 = 0.0; // frequency where the curve crosses 0.1 (NaN if it never does)
};

enum class EdgeModel {
    line,   // straight edge, orientation fitted from 50% crossings
    circle, // circular edge around a given center
};

struct MTFOptions {
    Scalar bin_width_px = 0.1; // ESF bin width as a fraction of the pixel pitch
    EdgeModel edge = EdgeModel::line;
    Point2 circle_center = Point2::Zero(); // pixels, for EdgeModel::circle
};

// Task-based MTF from an oversampled edge-spread function: pixels are
// projected onto the edge normal, binned, differentiated to the LSF,
// Hann-windowed and Fourier transformed. Errors out when the ROI has no
// detectable edge (contrast below 5x the flat-region noise).
MTFCurve mtf_task(const Image& image, Scalar pixel_pitch_mm, const RoiRect& roi,
                  const MTFOptions& options = {});

// Averages a stack of transaxial slices into one 2-D image.
Image average_stack(const std::vector<Image>& stack);

struct NPSGrid {
    int x0 = 0, y0 = 0;   // top-left of the ROI lattice
    int roi_size = 64;    // square ROI side, pixels
    int step = 32;        // lattice step (ROIs may overlap)
    int count_x = 4, count_y = 4;
};

struct NPSCurve {
    Vec radial_frequency; // 1/mm
    Vec radial_power;     // HU^2 mm^2
    Vec axial_frequency;  // 1/mm, the u >= 0 axis cut
    Vec axial_power;
    Scalar integral = 0.0; // integral of the 2-D NPS over frequency, HU^2
    int roi_size = 0;
    int roi_count = 0;
};

// Noise power spectrum: ensemble average of the squared DFT of
// plane-detrended ROIs, normalized so the spectral integral equals the
// ROI variance. Needs at least 16 ROIs.
NPSCurve nps(const std::vector<Image>& stack, Scalar pixel_pitch_mm, const NPSGrid& grid);

// Population variance of the ROI.
Scalar noise_variance(const Image& image, const RoiRect& roi);

Scalar rmse(const Vec& a, const Vec& b);
Scalar rmse(const Image& a, const Image& b);

// Variance of the annulus after subtracting the per-radius mean: energy of
// non-radially-symmetric structure such as aliasing streaks.
Scalar streak_energy(const Image& image, const RoiAnnulus& roi);

} // namespace dsct
