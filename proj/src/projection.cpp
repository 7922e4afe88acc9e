#include "seqrisk/projection.hpp"

#include "seqrisk/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace seqrisk {

namespace {

constexpr std::size_t kMaxPoints = 2000;
constexpr std::size_t kMaxBisection = 50;
constexpr double kEntropyTol = 1e-6;  // nats

double kl_divergence(const Matrix& p, const Matrix& num, double z) {
    double kl = 0.0;
    const std::size_t n = p.rows();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double pij = p(i, j);
            if (pij > 0.0) kl += pij * std::log(pij / (num(i, j) / z));
        }
    }
    return kl;
}

} // namespace

void TsneConfig::validate(std::size_t n) const {
    if (n < 4) throw ConfigError("t-SNE needs at least 4 points, got " + std::to_string(n));
    if (n > kMaxPoints) throw ConfigError("exact t-SNE supports at most 2000 points, got " + std::to_string(n));
    if (!(perplexity > 1.0)) throw ConfigError("perplexity must exceed 1");
    if (perplexity >= static_cast<double>(n) / 3.0) {
        throw ConfigError("perplexity " + std::to_string(perplexity) + " is infeasible for " + std::to_string(n) +
                          " points (must be below N/3)");
    }
    if (iterations < 250) throw ConfigError("t-SNE needs at least 250 iterations");
    if (dims < 1 || dims > 3) throw ConfigError("t-SNE output dims must be 1, 2 or 3");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
}

Matrix pairwise_sq_distances(const Matrix& x) {
    const std::size_t n = x.rows();
    Matrix d(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto xi = x.row(i);
        for (std::size_t j = i + 1; j < n; ++j) {
            const auto xj = x.row(j);
            double s = 0.0;
            for (std::size_t k = 0; k < x.cols(); ++k) {
                const double diff = xi[k] - xj[k];
                s += diff * diff;
            }
            d(i, j) = s;
            d(j, i) = s;
        }
    }
    return d;
}

Affinities compute_affinities(const Matrix& x, double perplexity) {
    require_finite(x, "t-SNE input");
    const std::size_t n = x.rows();
    const Matrix d = pairwise_sq_distances(x);
    const double target = std::log(perplexity);
    Affinities out;
    out.beta.assign(n, 1.0);
    out.entropy.assign(n, 0.0);
    Matrix cond(n, n);
    std::vector<double> row(n);

    for (std::size_t i = 0; i < n; ++i) {
        double dmin = std::numeric_limits<double>::infinity(), dsum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            dmin = std::min(dmin, d(i, j));
            dsum += d(i, j);
        }
        const double spread = dsum / static_cast<double>(n - 1) - dmin;
        double beta = spread > 0.0 ? 1.0 / spread : 1.0;
        double lo = 0.0, hi = std::numeric_limits<double>::infinity();
        double h = 0.0;
        for (std::size_t step = 0; step < kMaxBisection; ++step) {
            double sum = 0.0, wsum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) {
                    row[j] = 0.0;
                    continue;
                }
                const double shifted = d(i, j) - dmin;
                row[j] = std::exp(-beta * shifted);
                sum += row[j];
                wsum += shifted * row[j];
            }
            h = std::log(sum) + beta * wsum / sum;
            for (std::size_t j = 0; j < n; ++j) cond(i, j) = row[j] / sum;
            const double diff = h - target;
            if (std::abs(diff) < kEntropyTol) break;
            if (diff > 0.0) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
        out.beta[i] = beta;
        out.entropy[i] = h / std::log(2.0);
    }

    out.p = Matrix(n, n);
    const double denom = 2.0 * static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) out.p(i, j) = (cond(i, j) + cond(j, i)) / denom;
    }
    return out;
}

namespace {

// Rows sorted lexicographically by value (then by initial coordinates), so the
// optimisation sees the same sequence of points whatever the input row order.
std::vector<std::size_t> canonical_order(const Matrix& x, const Matrix* initial) {
    std::vector<std::size_t> order(x.rows());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto ra = x.row(a), rb = x.row(b);
        if (!std::equal(ra.begin(), ra.end(), rb.begin())) {
            return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
        }
        if (initial) {
            const auto ia = initial->row(a), ib = initial->row(b);
            return std::lexicographical_compare(ia.begin(), ia.end(), ib.begin(), ib.end());
        }
        return false;
    });
    return order;
}

Matrix take_rows(const Matrix& m, const std::vector<std::size_t>& order) {
    Matrix out(order.size(), m.cols());
    for (std::size_t i = 0; i < order.size(); ++i) std::copy(m.row(order[i]).begin(), m.row(order[i]).end(), out.row(i).begin());
    return out;
}

TsneResult run_tsne(const Matrix& x, const TsneConfig& cfg, Matrix initial);

TsneResult restore_order(TsneResult res, const std::vector<std::size_t>& order) {
    Matrix coords(res.coords.rows(), res.coords.cols());
    std::vector<double> entropy(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        std::copy(res.coords.row(i).begin(), res.coords.row(i).end(), coords.row(order[i]).begin());
        entropy[order[i]] = res.entropy[i];
    }
    res.coords = std::move(coords);
    res.entropy = std::move(entropy);
    return res;
}

} // namespace

TsneResult tsne(const Matrix& x, const TsneConfig& cfg) {
    cfg.validate(x.rows());
    const auto order = canonical_order(x, nullptr);
    RngStream rng(cfg.seed, 1);
    Matrix init(x.rows(), cfg.dims);
    for (double& v : init.data()) v = 1e-4 * rng.normal();
    return restore_order(run_tsne(take_rows(x, order), cfg, std::move(init)), order);
}

TsneResult tsne(const Matrix& x, const TsneConfig& cfg, Matrix initial) {
    cfg.validate(x.rows());
    if (initial.rows() != x.rows() || initial.cols() != cfg.dims) {
        throw DimensionError("t-SNE initial coordinates " + initial.shape_str() + " do not match " +
                             std::to_string(x.rows()) + "x" + std::to_string(cfg.dims));
    }
    const auto order = canonical_order(x, &initial);
    return restore_order(run_tsne(take_rows(x, order), cfg, take_rows(initial, order)), order);
}

namespace {

TsneResult run_tsne(const Matrix& x, const TsneConfig& cfg, Matrix initial) {
    const std::size_t n = x.rows();
    Affinities aff = compute_affinities(x, cfg.perplexity);
    TsneResult res;
    res.entropy = aff.entropy;
    res.target_entropy = std::log2(cfg.perplexity);

    Matrix y = std::move(initial);
    const std::size_t dims = cfg.dims;
    Matrix update(n, dims), gains(n, dims, 1.0), grad(n, dims), num(n, n);

    auto similarities = [&]() {
        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) {
                    num(i, j) = 0.0;
                    continue;
                }
                double s = 0.0;
                for (std::size_t k = 0; k < dims; ++k) {
                    const double diff = y(i, k) - y(j, k);
                    s += diff * diff;
                }
                num(i, j) = 1.0 / (1.0 + s);
                z += num(i, j);
            }
        }
        return z;
    };

    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const double z = similarities();
        res.kl_trace.push_back(kl_divergence(aff.p, num, z));
        if (!std::isfinite(res.kl_trace.back())) {
            throw NonFiniteError("t-SNE KL divergence became non-finite at iteration " + std::to_string(it));
        }
        const double exag = it < cfg.exaggeration_iters ? cfg.exaggeration : 1.0;
        const double momentum = it < cfg.momentum_switch ? cfg.momentum_initial : cfg.momentum_final;

        // KL gradient without its constant factor 4.
        grad.fill(0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double mult = (exag * aff.p(i, j) - num(i, j) / z) * num(i, j);
                for (std::size_t k = 0; k < dims; ++k) grad(i, k) += mult * (y(i, k) - y(j, k));
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < dims; ++k) {
                const double g = grad(i, k);
                double& gain = gains(i, k);
                gain = (g > 0.0) != (update(i, k) > 0.0) ? gain + 0.2 : gain * 0.8;
                gain = std::max(gain, cfg.min_gain);
                update(i, k) = momentum * update(i, k) - cfg.learning_rate * gain * g;
                y(i, k) += update(i, k);
            }
        }
        for (std::size_t k = 0; k < dims; ++k) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += y(i, k);
            mean /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) y(i, k) -= mean;
        }
    }
    const double z = similarities();
    res.kl_trace.push_back(kl_divergence(aff.p, num, z));
    res.coords = std::move(y);
    return res;
}

} // namespace

// ---------------------------------------------------------------- patients

namespace {

struct ActivationSet {
    Table table;
    std::vector<std::size_t> hidden_cols;
    std::map<std::string, std::size_t> row_of;
};

ActivationSet load_activations(const std::filesystem::path& path) {
    ActivationSet s;
    s.table = read_table(path, "seqrisk.activations");
    for (const char* required : {"patient_id", "label", "window", "predicted", "confusion"}) s.table.column(required);
    for (std::size_t c = 0; c < s.table.columns.size(); ++c) {
        const auto& name = s.table.columns[c];
        if (name.size() > 1 && name[0] == 'h' && std::all_of(name.begin() + 1, name.end(), ::isdigit)) s.hidden_cols.push_back(c);
    }
    if (s.hidden_cols.empty()) throw SchemaError("'" + path.string() + "' has no activation columns");
    const std::size_t id = s.table.column("patient_id");
    for (std::size_t r = 0; r < s.table.rows.size(); ++r) {
        if (!s.row_of.emplace(s.table.rows[r][id], r).second) {
            throw SchemaError("'" + path.string() + "' repeats patient " + s.table.rows[r][id]);
        }
    }
    return s;
}

const char* coord_name(std::size_t k, bool second) {
    static const char* first_names[] = {"x", "y", "z"};
    static const char* second_names[] = {"x_b", "y_b", "z_b"};
    return second ? second_names[k] : first_names[k];
}

} // namespace

Table project_patients(const std::vector<std::filesystem::path>& activation_files, const TsneConfig& cfg) {
    if (activation_files.empty() || activation_files.size() > 2) {
        throw InvalidArgument("projection takes one or two activation files");
    }
    std::vector<ActivationSet> sets;
    for (const auto& f : activation_files) sets.push_back(load_activations(f));
    const ActivationSet& a = sets.front();
    const std::size_t n = a.table.rows.size();
    const std::size_t id_a = a.table.column("patient_id");

    if (sets.size() == 2) {
        const ActivationSet& b = sets.back();
        if (b.table.rows.size() != n) throw SchemaError("activation files hold different patient counts");
        for (const auto& row : a.table.rows) {
            if (!b.row_of.count(row[id_a])) throw SchemaError("patient " + row[id_a] + " is missing from the second activation file");
        }
    }

    // Sets of different widths are zero-padded to a common width before the joint embedding.
    std::size_t width = 0;
    for (const auto& s : sets) width = std::max(width, s.hidden_cols.size());
    Matrix points(n * sets.size(), width);
    for (std::size_t si = 0; si < sets.size(); ++si) {
        const ActivationSet& s = sets[si];
        for (std::size_t r = 0; r < n; ++r) {
            const std::size_t src = si == 0 ? r : s.row_of.at(a.table.rows[r][id_a]);
            for (std::size_t k = 0; k < s.hidden_cols.size(); ++k) {
                points(si * n + r, k) = parse_number(s.table.rows[src][s.hidden_cols[k]], "activation");
            }
        }
    }
    const TsneResult res = tsne(points, cfg);

    Table out;
    out.schema = "seqrisk.projection";
    out.columns = {"patient_id", "label", "window", "predicted", "confusion"};
    for (std::size_t k = 0; k < cfg.dims; ++k) out.columns.push_back(coord_name(k, false));
    if (sets.size() == 2) {
        for (const char* c : {"window_b", "predicted_b", "confusion_b"}) out.columns.push_back(c);
        for (std::size_t k = 0; k < cfg.dims; ++k) out.columns.push_back(coord_name(k, true));
        out.columns.push_back("flipped");
        out.columns.push_back("transition");
    }
    const std::size_t c_label = a.table.column("label"), c_win = a.table.column("window"),
                      c_pred = a.table.column("predicted"), c_conf = a.table.column("confusion");
    for (std::size_t r = 0; r < n; ++r) {
        const auto& src = a.table.rows[r];
        std::vector<std::string> row{src[id_a], src[c_label], src[c_win], src[c_pred], src[c_conf]};
        for (std::size_t k = 0; k < cfg.dims; ++k) row.push_back(format_number(res.coords(r, k)));
        if (sets.size() == 2) {
            const ActivationSet& b = sets.back();
            const auto& other = b.table.rows[b.row_of.at(src[id_a])];
            const std::string& pred_b = other[b.table.column("predicted")];
            const std::string& conf_b = other[b.table.column("confusion")];
            row.push_back(other[b.table.column("window")]);
            row.push_back(pred_b);
            row.push_back(conf_b);
            for (std::size_t k = 0; k < cfg.dims; ++k) row.push_back(format_number(res.coords(n + r, k)));
            row.push_back(pred_b != src[c_pred] ? "1" : "0");
            row.push_back(src[c_conf] + "->" + conf_b);
        }
        out.rows.push_back(std::move(row));
    }
    return out;
}

} // namespace seqrisk
