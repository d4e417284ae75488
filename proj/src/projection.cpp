#include <algorithm>
#include <cmath>
#include <fstream>

#include "clear/probe.hpp"
#include "clear/rng.hpp"

namespace clear {

namespace {

// Jacobi eigensolver for a symmetric matrix; returns (eigenvalues,
// eigenvectors as columns).
std::pair<std::vector<double>, Mat> jacobi_eigen(Mat m) {
    size_t n = m.rows;
    Mat vecs(n, n);
    for (size_t i = 0; i < n; ++i) vecs(i, i) = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (size_t i = 0; i < n; ++i)
            for (size_t j = i + 1; j < n; ++j) off += m(i, j) * m(i, j);
        if (off < 1e-24) break;
        for (size_t p = 0; p < n; ++p) {
            for (size_t q = p + 1; q < n; ++q) {
                if (std::abs(m(p, q)) < 1e-18) continue;
                double theta = (m(q, q) - m(p, p)) / (2.0 * m(p, q));
                double t = (theta >= 0.0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (size_t k = 0; k < n; ++k) {
                    double mkp = m(k, p), mkq = m(k, q);
                    m(k, p) = c * mkp - s * mkq;
                    m(k, q) = s * mkp + c * mkq;
                }
                for (size_t k = 0; k < n; ++k) {
                    double mpk = m(p, k), mqk = m(q, k);
                    m(p, k) = c * mpk - s * mqk;
                    m(q, k) = s * mpk + c * mqk;
                }
                for (size_t k = 0; k < n; ++k) {
                    double vkp = vecs(k, p), vkq = vecs(k, q);
                    vecs(k, p) = c * vkp - s * vkq;
                    vecs(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<double> vals(n);
    for (size_t i = 0; i < n; ++i) vals[i] = m(i, i);
    return {vals, vecs};
}

std::vector<ProjectedPoint> project_pca(const std::vector<std::vector<double>>& x,
                                        const std::vector<int>& labels) {
    size_t n = x.size();
    size_t d = x[0].size();
    std::vector<double> mean(d, 0.0);
    for (const auto& row : x)
        for (size_t j = 0; j < d; ++j) mean[j] += row[j];
    for (double& v : mean) v /= static_cast<double>(n);

    double total_var = 0.0;
    Mat cov(d, d);
    for (const auto& row : x) {
        for (size_t i = 0; i < d; ++i) {
            double ci = row[i] - mean[i];
            total_var += ci * ci;
            for (size_t j = i; j < d; ++j) cov(i, j) += ci * (row[j] - mean[j]);
        }
    }
    if (total_var < 1e-24)
        throw Error(ErrorKind::data, "pca: all states are identical (zero variance)");
    for (size_t i = 0; i < d; ++i)
        for (size_t j = i; j < d; ++j) {
            cov(i, j) /= static_cast<double>(n);
            cov(j, i) = cov(i, j);
        }

    auto [vals, vecs] = jacobi_eigen(cov);
    // top-2 eigenvalue indices
    std::vector<size_t> order(d);
    for (size_t i = 0; i < d; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return vals[a] > vals[b]; });

    std::vector<std::vector<double>> axes(2, std::vector<double>(d, 0.0));
    for (size_t k = 0; k < 2 && k < d; ++k) {
        size_t col = order[k];
        for (size_t i = 0; i < d; ++i) axes[k][i] = vecs(i, col);
        // sign convention: largest-magnitude component positive
        size_t arg = 0;
        for (size_t i = 1; i < d; ++i)
            if (std::abs(axes[k][i]) > std::abs(axes[k][arg])) arg = i;
        if (axes[k][arg] < 0.0)
            for (double& v : axes[k]) v = -v;
    }

    std::vector<ProjectedPoint> out(n);
    for (size_t r = 0; r < n; ++r) {
        double px = 0.0, py = 0.0;
        for (size_t i = 0; i < d; ++i) {
            double c = x[r][i] - mean[i];
            px += c * axes[0][i];
            py += c * axes[1][i];
        }
        out[r] = {px, py, labels[r]};
    }
    return out;
}

// Compact t-SNE style layout: Gaussian affinities with per-point bandwidth
// matched to a perplexity target, Student-t low-dimensional kernel, gradient
// descent with momentum and early exaggeration.
std::vector<ProjectedPoint> project_tsne(const std::vector<std::vector<double>>& x,
                                         const std::vector<int>& labels, uint64_t seed) {
    size_t n = x.size();
    size_t d = x[0].size();
    double perplexity = std::min(30.0, std::max(2.0, static_cast<double>(n - 1) / 3.0));
    double target_entropy = std::log(perplexity);

    std::vector<double> d2(n * n, 0.0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (size_t k = 0; k < d; ++k) {
                double diff = x[i][k] - x[j][k];
                s += diff * diff;
            }
            d2[i * n + j] = d2[j * n + i] = s;
        }

    // conditional affinities via a binary search on precision
    std::vector<double> p(n * n, 0.0);
    for (size_t i = 0; i < n; ++i) {
        double beta = 1.0, beta_lo = 0.0, beta_hi = 1e300;
        for (int iter = 0; iter < 64; ++iter) {
            double sum = 0.0, weighted = 0.0;
            for (size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                double w = std::exp(-beta * d2[i * n + j]);
                sum += w;
                weighted += w * d2[i * n + j];
            }
            if (sum <= 0.0) {
                beta = beta_lo;
                break;
            }
            double entropy = std::log(sum) + beta * weighted / sum;
            if (std::abs(entropy - target_entropy) < 1e-5) break;
            if (entropy > target_entropy) {
                beta_lo = beta;
                beta = (beta_hi >= 1e300) ? beta * 2.0 : (beta + beta_hi) / 2.0;
            } else {
                beta_hi = beta;
                beta = (beta + beta_lo) / 2.0;
            }
        }
        double sum = 0.0;
        for (size_t j = 0; j < n; ++j)
            if (j != i) sum += std::exp(-beta * d2[i * n + j]);
        for (size_t j = 0; j < n; ++j)
            if (j != i && sum > 0.0) p[i * n + j] = std::exp(-beta * d2[i * n + j]) / sum;
    }
    // symmetrize
    std::vector<double> pij(n * n, 0.0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j)
            pij[i * n + j] = std::max((p[i * n + j] + p[j * n + i]) / (2.0 * n), 1e-12);

    Rng rng(seed);
    std::vector<double> y(n * 2), vel(n * 2, 0.0);
    for (double& v : y) v = 1e-2 * rng.next_gaussian();

    const int iters = 300;
    for (int it = 0; it < iters; ++it) {
        double exaggeration = it < 100 ? 12.0 : 1.0;
        double momentum = it < 100 ? 0.5 : 0.8;
        // Student-t kernel
        std::vector<double> q(n * n, 0.0);
        double qsum = 0.0;
        for (size_t i = 0; i < n; ++i)
            for (size_t j = i + 1; j < n; ++j) {
                double dx = y[2 * i] - y[2 * j];
                double dy = y[2 * i + 1] - y[2 * j + 1];
                double w = 1.0 / (1.0 + dx * dx + dy * dy);
                q[i * n + j] = q[j * n + i] = w;
                qsum += 2.0 * w;
            }
        for (size_t i = 0; i < n; ++i) {
            double gx = 0.0, gy = 0.0;
            for (size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                double w = q[i * n + j];
                double qij = std::max(w / qsum, 1e-12);
                double mult = (exaggeration * pij[i * n + j] - qij) * w;
                gx += 4.0 * mult * (y[2 * i] - y[2 * j]);
                gy += 4.0 * mult * (y[2 * i + 1] - y[2 * j + 1]);
            }
            vel[2 * i] = momentum * vel[2 * i] - 200.0 * gx;
            vel[2 * i + 1] = momentum * vel[2 * i + 1] - 200.0 * gy;
        }
        for (size_t i = 0; i < 2 * n; ++i) y[i] += vel[i];
    }

    std::vector<ProjectedPoint> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = {y[2 * i], y[2 * i + 1], labels[i]};
    return out;
}

}  // namespace

std::vector<ProjectedPoint> project_hidden_2d(const std::vector<HiddenState>& states,
                                              const std::vector<int>& labels,
                                              ProjectionMethod method, uint64_t seed) {
    if (states.size() < 3)
        throw Error(ErrorKind::contract, "projection needs at least 3 states");
    if (states.size() != labels.size())
        throw Error(ErrorKind::contract, "projection labels do not match states");
    size_t d = states[0].values.size();
    std::vector<std::vector<double>> x;
    x.reserve(states.size());
    for (const auto& s : states) {
        if (s.values.size() != d)
            throw Error(ErrorKind::contract, "projection states have mixed dims");
        x.push_back(s.values);
    }
    return method == ProjectionMethod::pca ? project_pca(x, labels)
                                           : project_tsne(x, labels, seed);
}

void write_projection_tsv(const std::string& path,
                          const std::vector<ProjectedPoint>& points,
                          const std::vector<std::string>& ids) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::config, "cannot write projection file: " + path);
    out << "x\ty\tlabel\tid\n";
    out.precision(17);
    for (size_t i = 0; i < points.size(); ++i) {
        out << points[i].x << "\t" << points[i].y << "\t" << points[i].label << "\t"
            << (i < ids.size() ? ids[i] : std::to_string(i)) << "\n";
    }
}

}  // namespace clear
