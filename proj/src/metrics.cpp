#include "dsct/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <vector>

namespace dsct {

namespace {

void check_roi(const Image& image, const RoiRect& roi) {
    if (roi.w <= 0 || roi.h <= 0) throw Error(ErrorCategory::config, "empty ROI");
    if (roi.x0 < 0 || roi.y0 < 0 || roi.x0 + roi.w > image.cols() || roi.y0 + roi.h > image.rows())
        throw Error(ErrorCategory::config, "ROI outside image bounds");
}

// 50% crossing of one profile, linearly interpolated; nullopt when the
// profile never crosses its midlevel.
std::optional<Scalar> half_crossing(const Vec& profile) {
    const int n = static_cast<int>(profile.size());
    if (n < 4) return std::nullopt;
    const Scalar left = profile.head(std::max(n / 8, 1)).mean();
    const Scalar right = profile.tail(std::max(n / 8, 1)).mean();
    const Scalar mid = 0.5 * (left + right);
    if (left == right) return std::nullopt;
    for (int i = 0; i + 1 < n; ++i) {
        const Scalar a = profile[i] - mid;
        const Scalar b = profile[i + 1] - mid;
        if (a == 0) return static_cast<Scalar>(i);
        if ((a < 0) != (b < 0)) return i + a / (a - b);
    }
    return std::nullopt;
}

// Naive DFT magnitude of a real series (the LSF is short).
Vec dft_magnitude(const Vec& x) {
    const int n = static_cast<int>(x.size());
    const int nf = n / 2 + 1;
    Vec mag(nf);
    for (int k = 0; k < nf; ++k) {
        std::complex<Scalar> acc(0, 0);
        for (int i = 0; i < n; ++i)
            acc += x[i] * std::polar(Scalar(1), -2.0 * kPi * k * i / n);
        mag[k] = std::abs(acc);
    }
    return mag;
}

// Row-column complex DFT of a real matrix.
Eigen::MatrixXcd dft2(const Image& x) {
    const int ny = static_cast<int>(x.rows());
    const int nx = static_cast<int>(x.cols());
    Eigen::MatrixXcd rows(ny, nx);
    for (int r = 0; r < ny; ++r) {
        for (int k = 0; k < nx; ++k) {
            std::complex<Scalar> acc(0, 0);
            for (int i = 0; i < nx; ++i)
                acc += x(r, i) * std::polar(Scalar(1), -2.0 * kPi * k * i / nx);
            rows(r, k) = acc;
        }
    }
    Eigen::MatrixXcd out(ny, nx);
    for (int c = 0; c < nx; ++c) {
        for (int k = 0; k < ny; ++k) {
            std::complex<Scalar> acc(0, 0);
            for (int i = 0; i < ny; ++i)
                acc += rows(i, c) * std::polar(Scalar(1), -2.0 * kPi * k * i / ny);
            out(k, c) = acc;
        }
    }
    return out;
}

} // namespace

Image average_stack(const std::vector<Image>& stack) {
    if (stack.empty()) throw Error(ErrorCategory::config, "empty image stack");
    Image mean = stack.front();
    for (std::size_t i = 1; i < stack.size(); ++i) {
        if (stack[i].rows() != mean.rows() || stack[i].cols() != mean.cols())
            throw Error(ErrorCategory::dimension, "stack slices disagree in size");
        mean += stack[i];
    }
    return mean / static_cast<Scalar>(stack.size());
}

MTFCurve mtf_task(const Image& image, Scalar pixel_pitch_mm, const RoiRect& roi,
                  const MTFOptions& options) {
    check_roi(image, roi);
    if (!(pixel_pitch_mm > 0)) throw Error(ErrorCategory::config, "pixel pitch must be positive");

    // Signed distance from each ROI pixel to the edge, in mm.
    std::vector<Scalar> dist;
    std::vector<Scalar> value;
    dist.reserve(static_cast<std::size_t>(roi.w) * roi.h);
    value.reserve(dist.capacity());

    if (options.edge == EdgeModel::line) {
        // Fit x = a y + b through the per-row 50% crossings; fall back to
        // the transposed orientation when rows do not cross.
        std::vector<Point2> pts;
        for (int y = 0; y < roi.h; ++y) {
            Vec profile(roi.w);
            for (int x = 0; x < roi.w; ++x) profile[x] = image(roi.y0 + y, roi.x0 + x);
            if (auto c = half_crossing(profile)) pts.push_back(Point2(*c, static_cast<Scalar>(y)));
        }
        bool transposed = false;
        if (pts.size() < static_cast<std::size_t>(roi.h) / 2) {
            pts.clear();
            for (int x = 0; x < roi.w; ++x) {
                Vec profile(roi.h);
                for (int y = 0; y < roi.h; ++y) profile[y] = image(roi.y0 + y, roi.x0 + x);
                if (auto c = half_crossing(profile))
                    pts.push_back(Point2(*c, static_cast<Scalar>(x)));
            }
            transposed = true;
        }
        if (pts.size() < 3) throw Error(ErrorCategory::numeric, "no detectable edge in ROI");
        Scalar sy = 0, sx = 0, syy = 0, sxy = 0;
        for (const auto& p : pts) {
            sx += p.x();
            sy += p.y();
            syy += p.y() * p.y();
            sxy += p.x() * p.y();
        }
        const Scalar n = static_cast<Scalar>(pts.size());
        const Scalar denom = n * syy - sy * sy;
        const Scalar a = denom != 0 ? (n * sxy - sx * sy) / denom : 0.0;
        const Scalar b = (sx - a * sy) / n;
        const Scalar norm = std::sqrt(1.0 + a * a);
        for (int y = 0; y < roi.h; ++y) {
            for (int x = 0; x < roi.w; ++x) {
                const Scalar u = transposed ? static_cast<Scalar>(y) : static_cast<Scalar>(x);
                const Scalar t = transposed ? static_cast<Scalar>(x) : static_cast<Scalar>(y);
                dist.push_back((u - a * t - b) / norm * pixel_pitch_mm);
                value.push_back(image(roi.y0 + y, roi.x0 + x));
            }
        }
    } else {
        const Point2 c = options.circle_center;
        Scalar r_sum = 0;
        int r_count = 0;
        for (int y = 0; y < roi.h; ++y) {
            for (int x = 0; x < roi.w; ++x) {
                const Scalar r = std::hypot(roi.x0 + x - c.x(), roi.y0 + y - c.y());
                dist.push_back(r * pixel_pitch_mm);
                value.push_back(image(roi.y0 + y, roi.x0 + x));
                r_sum += r;
                ++r_count;
            }
        }
        // Re-center distances on the mean radius so the ESF sits mid-range.
        const Scalar r0 = r_sum / r_count * pixel_pitch_mm;
        for (auto& d : dist) d -= r0;
    }

    // Oversampled ESF.
    const Scalar bin = options.bin_width_px * pixel_pitch_mm;
    const Scalar dmin = *std::min_element(dist.begin(), dist.end());
    const Scalar dmax = *std::max_element(dist.begin(), dist.end());
    const int n_bins = std::max(static_cast<int>(std::floor((dmax - dmin) / bin)) + 1, 8);
    Vec esf = Vec::Zero(n_bins);
    Eigen::VectorXi count = Eigen::VectorXi::Zero(n_bins);
    for (std::size_t i = 0; i < dist.size(); ++i) {
        int b = static_cast<int>((dist[i] - dmin) / bin);
        b = std::clamp(b, 0, n_bins - 1);
        esf[b] += value[i];
        count[b] += 1;
    }
    // Fill empty bins by linear interpolation between populated neighbors.
    int last = -1;
    for (int b = 0; b < n_bins; ++b) {
        if (count[b] > 0) {
            esf[b] /= count[b];
            if (last >= 0 && b - last > 1) {
                for (int m = last + 1; m < b; ++m)
                    esf[m] = esf[last] + (esf[b] - esf[last]) * (m - last) / (b - last);
            }
            last = b;
        }
    }
    if (last < 0) throw Error(ErrorCategory::numeric, "no detectable edge in ROI");
    for (int b = last + 1; b < n_bins; ++b) esf[b] = esf[last];
    int first = 0;
    while (first < n_bins && count[first] == 0) ++first;
    for (int b = 0; b < first; ++b) esf[b] = esf[first];

    // Edge strength check: contrast against the flat-tail noise.
    const int tail = std::max(n_bins / 8, 2);
    const Scalar left_mean = esf.head(tail).mean();
    const Scalar right_mean = esf.tail(tail).mean();
    const Scalar left_sd = std::sqrt((esf.head(tail).array() - left_mean).square().mean());
    const Scalar right_sd = std::sqrt((esf.tail(tail).array() - right_mean).square().mean());
    const Scalar noise_sd = std::max(0.5 * (left_sd + right_sd), Scalar(1e-12));
    if (std::abs(right_mean - left_mean) < 5.0 * noise_sd)
        throw Error(ErrorCategory::numeric, "no detectable edge in ROI (contrast below noise)");

    // LSF by central differences, then a Hann window about the peak.
    Vec lsf = Vec::Zero(n_bins);
    for (int b = 1; b + 1 < n_bins; ++b) lsf[b] = (esf[b + 1] - esf[b - 1]) / (2.0 * bin);
    int peak = 0;
    for (int b = 0; b < n_bins; ++b)
        if (std::abs(lsf[b]) > std::abs(lsf[peak])) peak = b;
    const int half_width = std::max(std::min(peak, n_bins - 1 - peak), 4);
    for (int b = 0; b < n_bins; ++b) {
        const Scalar t = static_cast<Scalar>(b - peak) / half_width;
        lsf[b] *= (std::abs(t) >= 1.0) ? 0.0 : 0.5 * (1.0 + std::cos(kPi * t));
    }

    const Vec mag = dft_magnitude(lsf);
    MTFCurve curve;
    if (mag[0] <= 0) throw Error(ErrorCategory::numeric, "degenerate LSF");
    curve.mtf = mag / mag[0];
    curve.frequency.resize(mag.size());
    for (Index k = 0; k < curve.frequency.size(); ++k)
        curve.frequency[k] = static_cast<Scalar>(k) / (n_bins * bin);

    curve.f_10 = std::numeric_limits<Scalar>::quiet_NaN();
    for (Index k = 1; k < curve.mtf.size(); ++k) {
        if (curve.mtf[k] < 0.1 && curve.mtf[k - 1] >= 0.1) {
            const Scalar t = (0.1 - curve.mtf[k - 1]) / (curve.mtf[k] - curve.mtf[k - 1]);
            curve.f_10 = curve.frequency[k - 1] + t * (curve.frequency[k] - curve.frequency[k - 1]);
            break;
        }
    }
    return curve;
}

NPSCurve nps(const std::vector<Image>& stack, Scalar pixel_pitch_mm, const NPSGrid& grid) {
    if (stack.empty()) throw Error(ErrorCategory::config, "empty image stack");
    if (!(pixel_pitch_mm > 0)) throw Error(ErrorCategory::config, "pixel pitch must be positive");
    const int n = grid.roi_size;
    if (n < 2) throw Error(ErrorCategory::config, "ROI size too small");
    const int total_rois = grid.count_x * grid.count_y * static_cast<int>(stack.size());
    if (total_rois < 16) throw Error(ErrorCategory::config, "NPS needs at least 16 ROIs");

    Image power = Image::Zero(n, n);
    int used = 0;
    for (const auto& image : stack) {
        for (int gy = 0; gy < grid.count_y; ++gy) {
            for (int gx = 0; gx < grid.count_x; ++gx) {
                const RoiRect roi{grid.x0 + gx * grid.step, grid.y0 + gy * grid.step, n, n};
                check_roi(image, roi);
                Image patch = image.block(roi.y0, roi.x0, n, n);

                // Plane detrend: subtract the least-squares a x + b y + c.
                Scalar sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0, sv = 0, svx = 0, svy = 0;
                for (int y = 0; y < n; ++y) {
                    for (int x = 0; x < n; ++x) {
                        const Scalar v = patch(y, x);
                        sx += x;
                        sy += y;
                        sxx += x * x;
                        syy += y * y;
                        sxy += static_cast<Scalar>(x) * y;
                        sv += v;
                        svx += v * x;
                        svy += v * y;
                    }
                }
                const Scalar m = static_cast<Scalar>(n) * n;
                Eigen::Matrix3d lhs;
                lhs << sxx, sxy, sx, sxy, syy, sy, sx, sy, m;
                Eigen::Vector3d rhs(svx, svy, sv);
                const Eigen::Vector3d plane = lhs.ldlt().solve(rhs);
                for (int y = 0; y < n; ++y)
                    for (int x = 0; x < n; ++x)
                        patch(y, x) -= plane[0] * x + plane[1] * y + plane[2];

                const Eigen::MatrixXcd f = dft2(patch);
                power += f.cwiseAbs2() * (pixel_pitch_mm * pixel_pitch_mm / (m));
                ++used;
            }
        }
    }
    power /= static_cast<Scalar>(used);

    NPSCurve curve;
    curve.roi_size = n;
    curve.roi_count = used;
    const Scalar df = 1.0 / (n * pixel_pitch_mm);
    curve.integral = power.sum() * df * df;

    // Radial binning over the centered spectrum.
    const int n_radial = n / 2 + 1;
    Vec radial = Vec::Zero(n_radial);
    Eigen::VectorXi counts = Eigen::VectorXi::Zero(n_radial);
    for (int v = 0; v < n; ++v) {
        const int fv = v <= n / 2 ? v : v - n;
        for (int u = 0; u < n; ++u) {
            const int fu = u <= n / 2 ? u : u - n;
            const int bin = static_cast<int>(std::round(std::hypot<Scalar>(fu, fv)));
            if (bin >= n_radial) continue;
            radial[bin] += power(v, u);
            counts[bin] += 1;
        }
    }
    curve.radial_frequency.resize(n_radial);
    curve.radial_power.resize(n_radial);
    for (int k = 0; k < n_radial; ++k) {
        curve.radial_frequency[k] = k * df;
        curve.radial_power[k] = counts[k] > 0 ? radial[k] / counts[k] : 0.0;
    }
    curve.axial_frequency.resize(n / 2 + 1);
    curve.axial_power.resize(n / 2 + 1);
    for (int k = 0; k <= n / 2; ++k) {
        curve.axial_frequency[k] = k * df;
        curve.axial_power[k] = power(0, k);
    }
    return curve;
}

Scalar noise_variance(const Image& image, const RoiRect& roi) {
    check_roi(image, roi);
    const Image patch = image.block(roi.y0, roi.x0, roi.h, roi.w);
    const Scalar mean = patch.mean();
    return (patch.array() - mean).square().mean();
}

Scalar rmse(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw Error(ErrorCategory::dimension, "rmse operand size mismatch");
    if (a.size() == 0) throw Error(ErrorCategory::config, "rmse of empty vectors");
    return std::sqrt((a - b).squaredNorm() / a.size());
}

Scalar rmse(const Image& a, const Image& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw Error(ErrorCategory::dimension, "rmse operand size mismatch");
    return std::sqrt((a - b).squaredNorm() / (a.rows() * a.cols()));
}

Scalar streak_energy(const Image& image, const RoiAnnulus& roi) {
    if (!(roi.r_out > roi.r_in && roi.r_in >= 0))
        throw Error(ErrorCategory::config, "annulus requires 0 <= r_in < r_out");
    // Bin by integer radius, subtract per-bin means, take the variance.
    const int n_bins = static_cast<int>(std::ceil(roi.r_out)) + 1;
    Vec sums = Vec::Zero(n_bins);
    Eigen::VectorXi counts = Eigen::VectorXi::Zero(n_bins);
    std::vector<std::pair<int, Scalar>> members;
    for (int y = 0; y < image.rows(); ++y) {
        for (int x = 0; x < image.cols(); ++x) {
            const Scalar r = std::hypot(x - roi.cx, y - roi.cy);
            if (r < roi.r_in || r > roi.r_out) continue;
            const int bin = std::min(static_cast<int>(r), n_bins - 1);
            sums[bin] += image(y, x);
            counts[bin] += 1;
            members.emplace_back(bin, image(y, x));
        }
    }
    if (members.empty()) throw Error(ErrorCategory::config, "empty annulus ROI");
    Scalar acc = 0;
    for (const auto& [bin, v] : members) {
        const Scalar mean = sums[bin] / counts[bin];
        acc += (v - mean) * (v - mean);
    }
    return acc / members.size();
}

} // namespace dsct
