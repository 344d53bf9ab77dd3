#include "fmab/io.hpp"

#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace fmab {

namespace {

using nlohmann::json;

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        // Trim surrounding whitespace and carriage returns.
        const auto begin = cell.find_first_not_of(" \t\r");
        const auto end = cell.find_last_not_of(" \t\r");
        cells.push_back(begin == std::string::npos ? "" : cell.substr(begin, end - begin + 1));
    }
    if (!line.empty() && line.back() == ',') cells.push_back("");
    return cells;
}

std::string current_timestamp() {
    std::time_t t;
    if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) {
        t = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
    } else {
        t = std::time(nullptr);
    }
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json to_json(const VectorXd& v) {
    json a = json::array();
    for (long i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

json to_json(const MatrixXd& m) {
    json rows = json::array();
    for (long r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (long c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

VectorXd vector_from_json(const json& a) {
    VectorXd v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[i] = a[i].get<double>();
    return v;
}

MatrixXd matrix_from_json(const json& a) {
    const long rows = static_cast<long>(a.size());
    const long cols = rows > 0 ? static_cast<long>(a[0].size()) : 0;
    MatrixXd m(rows, cols);
    for (long r = 0; r < rows; ++r) {
        for (long c = 0; c < cols; ++c) m(r, c) = a[r][c].get<double>();
    }
    return m;
}

json params_to_json(const ModelParams& params) {
    json j;
    j["intercepts"] = to_json(params.loadings.intercepts);
    j["loadings"] = to_json(params.loadings.matrix);
    j["weights"] = to_json(params.mixture.weights);
    json means = json::array(), covs = json::array();
    for (int i = 0; i < params.spec.k; ++i) {
        means.push_back(to_json(params.mixture.means[i]));
        covs.push_back(to_json(params.mixture.covs[i]));
    }
    j["means"] = means;
    j["covariances"] = covs;
    return j;
}

ModelParams params_from_json(const json& j, const ModelSpec& spec) {
    ModelParams params;
    params.spec = spec;
    params.loadings.intercepts = vector_from_json(j.at("intercepts"));
    params.loadings.matrix = matrix_from_json(j.at("loadings"));
    params.mixture.weights = vector_from_json(j.at("weights"));
    for (const auto& m : j.at("means")) params.mixture.means.push_back(vector_from_json(m));
    for (const auto& c : j.at("covariances")) params.mixture.covs.push_back(matrix_from_json(c));
    return params;
}

}  // namespace

PatternTable load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw parse_error("load_csv: cannot open " + path);

    std::string line;
    if (!std::getline(in, line)) throw parse_error("load_csv: empty file " + path);
    const std::vector<std::string> header = split_csv_line(line);
    const int p = static_cast<int>(header.size());
    if (p == 0) throw parse_error("load_csv: empty header row");

    std::vector<std::vector<std::uint8_t>> rows;
    long line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const std::vector<std::string> cells = split_csv_line(line);
        if (static_cast<int>(cells.size()) != p) {
            throw parse_error("load_csv: row " + std::to_string(line_no) + " has " +
                              std::to_string(cells.size()) + " cells, expected " +
                              std::to_string(p));
        }
        std::vector<std::uint8_t> row(p);
        for (int j = 0; j < p; ++j) {
            if (cells[j] == "0") {
                row[j] = 0;
            } else if (cells[j] == "1") {
                row[j] = 1;
            } else {
                throw parse_error("load_csv: non-binary cell '" + cells[j] + "' at row " +
                                  std::to_string(line_no) + ", column " + std::to_string(j + 1));
            }
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw parse_error("load_csv: no data rows in " + path);

    PatternTable table = PatternTable::from_rows(rows, p);
    table.item_names = header;
    return table;
}

void write_csv(const PatternTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw parse_error("write_csv: cannot open " + path);
    for (int j = 0; j < table.p; ++j) {
        if (j) out << ',';
        out << (j < static_cast<int>(table.item_names.size()) ? table.item_names[j]
                                                              : "item" + std::to_string(j + 1));
    }
    out << '\n';
    for (std::size_t h = 0; h < table.size(); ++h) {
        for (long c = 0; c < table.counts[h]; ++c) {
            for (int j = 0; j < table.p; ++j) {
                if (j) out << ',';
                out << int(table.patterns[h][j]);
            }
            out << '\n';
        }
    }
}

FitArtifact make_artifact(const FitResult& result, const PatternTable& data,
                          const TensorGrid& grid) {
    FitArtifact art;
    art.spec = result.params.spec;
    art.config = result.config;
    art.params = result.params;
    art.loglik_trace = result.loglik_trace;
    art.converged = result.converged;
    art.n_iter = result.n_iter;
    art.loglik = result.loglik;
    art.aic = result.aic;
    art.bic = result.bic;
    art.posteriors = result.posteriors;
    art.map_labels = classify_map(result.posteriors);
    art.factor_scores = fmab::factor_scores(result.params, data, grid);
    art.residuals = bivariate_residuals(result.params, data, grid);
    art.fit_tests = pattern_fit_tests(result.params, data, grid);
    art.item_names = data.item_names;
    art.created = current_timestamp();
    art.seed = result.config.seed;
    return art;
}

void write_fit(const FitArtifact& artifact, const std::string& path) {
    json j;
    j["format_version"] = FitArtifact::kFormatVersion;
    j["created"] = artifact.created;
    j["seed"] = artifact.seed;
    j["spec"] = {{"p", artifact.spec.p}, {"q", artifact.spec.q}, {"k", artifact.spec.k}};
    j["config"] = {{"quad_points", artifact.config.quad_points},
                   {"epsilon", artifact.config.epsilon},
                   {"max_iter", artifact.config.max_iter},
                   {"newton_max", artifact.config.newton_max},
                   {"n_starts", artifact.config.n_starts},
                   {"ridge", artifact.config.ridge},
                   {"seed", artifact.config.seed}};
    j["params"] = params_to_json(artifact.params);
    j["loglik_trace"] = artifact.loglik_trace;
    j["converged"] = artifact.converged;
    j["n_iter"] = artifact.n_iter;
    j["loglik"] = artifact.loglik;
    j["aic"] = artifact.aic;
    j["bic"] = artifact.bic;
    j["posteriors"] = to_json(artifact.posteriors);
    j["map_labels"] = artifact.map_labels;
    j["factor_scores"] = to_json(artifact.factor_scores);
    j["item_names"] = artifact.item_names;

    json cells = json::array();
    for (const auto& cell : artifact.residuals.entries) {
        cells.push_back({{"item_a", cell.item_a},
                         {"item_b", cell.item_b},
                         {"value_a", cell.value_a},
                         {"value_b", cell.value_b},
                         {"observed", cell.observed},
                         {"expected", cell.expected},
                         {"residual", cell.residual},
                         {"unstable", cell.unstable}});
    }
    j["residuals"] = {{"entries", cells},
                      {"max_residual", artifact.residuals.max_residual},
                      {"threshold", artifact.residuals.threshold}};
    j["fit_tests"] = {{"gf", artifact.fit_tests.gf},
                      {"lr", artifact.fit_tests.lr},
                      {"df", artifact.fit_tests.df},
                      {"df_convention", artifact.fit_tests.df_convention}};

    std::ofstream out(path);
    if (!out) throw parse_error("write_fit: cannot open " + path);
    out << j.dump(2) << '\n';
}

FitArtifact read_fit(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw parse_error("read_fit: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw parse_error(std::string("read_fit: invalid artifact: ") + e.what());
    }
    if (!j.contains("format_version") ||
        j["format_version"].get<int>() != FitArtifact::kFormatVersion) {
        throw parse_error("read_fit: unsupported artifact format version");
    }

    FitArtifact art;
    try {
        art.created = j.at("created").get<std::string>();
        art.seed = j.at("seed").get<std::uint64_t>();
        art.spec = {j.at("spec").at("p").get<int>(), j.at("spec").at("q").get<int>(),
                    j.at("spec").at("k").get<int>()};
        const json& cfg = j.at("config");
        art.config.quad_points = cfg.at("quad_points").get<int>();
        art.config.epsilon = cfg.at("epsilon").get<double>();
        art.config.max_iter = cfg.at("max_iter").get<int>();
        art.config.newton_max = cfg.at("newton_max").get<int>();
        art.config.n_starts = cfg.at("n_starts").get<int>();
        art.config.ridge = cfg.at("ridge").get<double>();
        art.config.seed = cfg.at("seed").get<std::uint64_t>();
        art.params = params_from_json(j.at("params"), art.spec);
        art.loglik_trace = j.at("loglik_trace").get<std::vector<double>>();
        art.converged = j.at("converged").get<bool>();
        art.n_iter = j.at("n_iter").get<int>();
        art.loglik = j.at("loglik").get<double>();
        art.aic = j.at("aic").get<double>();
        art.bic = j.at("bic").get<double>();
        art.posteriors = matrix_from_json(j.at("posteriors"));
        art.map_labels = j.at("map_labels").get<std::vector<int>>();
        art.factor_scores = matrix_from_json(j.at("factor_scores"));
        art.item_names = j.at("item_names").get<std::vector<std::string>>();
        const json& res = j.at("residuals");
        art.residuals.max_residual = res.at("max_residual").get<double>();
        art.residuals.threshold = res.at("threshold").get<double>();
        for (const auto& c : res.at("entries")) {
            BivariateCell cell;
            cell.item_a = c.at("item_a").get<int>();
            cell.item_b = c.at("item_b").get<int>();
            cell.value_a = c.at("value_a").get<int>();
            cell.value_b = c.at("value_b").get<int>();
            cell.observed = c.at("observed").get<double>();
            cell.expected = c.at("expected").get<double>();
            cell.residual = c.at("residual").get<double>();
            cell.unstable = c.at("unstable").get<bool>();
            art.residuals.entries.push_back(cell);
        }
        const json& tests = j.at("fit_tests");
        art.fit_tests.gf = tests.at("gf").get<double>();
        art.fit_tests.lr = tests.at("lr").get<double>();
        art.fit_tests.df = tests.at("df").get<long>();
        art.fit_tests.df_convention = tests.at("df_convention").get<std::string>();
    } catch (const json::exception& e) {
        throw parse_error(std::string("read_fit: invalid artifact: ") + e.what());
    }
    return art;
}

namespace {

std::string item_label(const std::vector<std::string>& names, int j) {
    if (j < static_cast<int>(names.size()) && !names[j].empty()) return names[j];
    return "item" + std::to_string(j + 1);
}

std::string num(double v) {
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
}

}  // namespace

std::string format_fit_report(const FitArtifact& art) {
    std::ostringstream os;
    os << "Model: p = " << art.spec.p << ", q = " << art.spec.q << ", k = " << art.spec.k
       << "  (free parameters: " << count_free_parameters(art.spec) << ")\n";
    os << "Converged: " << (art.converged ? "yes" : "no") << " after " << art.n_iter
       << " iterations\n";
    os << "logL = " << num(art.loglik) << "   AIC = " << num(art.aic)
       << "   BIC = " << num(art.bic) << "\n";
    os << "GF = " << num(art.fit_tests.gf) << "   LR = " << num(art.fit_tests.lr)
       << "   df = " << art.fit_tests.df << "  [df convention: "
       << art.fit_tests.df_convention << "]\n";
    os << "Max bivariate residual = " << num(art.residuals.max_residual) << " (threshold "
       << num(art.residuals.threshold) << ")\n\n";

    os << std::left << std::setw(12) << "Item" << std::right << std::setw(12) << "intercept";
    for (int r = 0; r < art.spec.q; ++r) {
        os << std::setw(12) << ("loading" + std::to_string(r + 1));
    }
    os << "\n";
    for (int j = 0; j < art.spec.p; ++j) {
        os << std::left << std::setw(12) << item_label(art.item_names, j) << std::right
           << std::setw(12) << num(art.params.loadings.intercepts[j]);
        for (int r = 0; r < art.spec.q; ++r) {
            os << std::setw(12) << num(art.params.loadings.matrix(j, r));
        }
        os << "\n";
    }

    os << "\nMixture components\n";
    for (int i = 0; i < art.spec.k; ++i) {
        os << "  component " << (i + 1) << ": weight = " << num(art.params.mixture.weights[i])
           << ", mean = [";
        for (int r = 0; r < art.spec.q; ++r) {
            os << (r ? ", " : "") << num(art.params.mixture.means[i][r]);
        }
        os << "]\n";
    }
    return os.str();
}

std::string format_selection_report(const SelectionResult& result) {
    std::ostringstream os;
    os << std::right << std::setw(4) << "q" << std::setw(4) << "k" << std::setw(14) << "logL"
       << std::setw(8) << "#par" << std::setw(14) << "AIC" << std::setw(14) << "BIC"
       << std::setw(14) << "max.resid" << "\n";
    for (const auto& c : result.trace) {
        os << std::setw(4) << c.q << std::setw(4) << c.k;
        if (c.fit_ok) {
            os << std::setw(14) << num(c.loglik) << std::setw(8) << c.n_par << std::setw(14)
               << num(c.aic) << std::setw(14) << num(c.bic) << std::setw(14)
               << num(c.max_residual);
        } else {
            os << "    fit failed: " << c.error;
        }
        os << "\n";
    }
    if (result.success) {
        os << "\nSelected (by " << result.criterion << "): q = " << result.chosen_q
           << ", k = " << result.chosen_k << "\n";
    } else {
        os << "\nNo candidate q passed the bivariate residual screen.\n";
    }
    return os.str();
}

std::string format_residual_report(const BivariateResidualReport& report,
                                   const std::vector<std::string>& item_names) {
    std::ostringstream os;
    os << std::left << std::setw(14) << "item.a" << std::setw(14) << "item.b" << std::right
       << std::setw(8) << "cell" << std::setw(12) << "observed" << std::setw(12) << "expected"
       << std::setw(12) << "residual" << "\n";
    for (const auto& cell : report.entries) {
        os << std::left << std::setw(14) << item_label(item_names, cell.item_a) << std::setw(14)
           << item_label(item_names, cell.item_b) << std::right << std::setw(6) << "("
           << cell.value_a << "," << cell.value_b << ")" << std::setw(10) << num(cell.observed)
           << std::setw(12) << num(cell.expected) << std::setw(12)
           << (cell.unstable ? "unstable" : num(cell.residual)) << "\n";
    }
    os << "\nMax residual = " << num(report.max_residual) << " (threshold "
       << num(report.threshold) << ")\n";
    return os.str();
}

std::string format_bootstrap_report(const BootstrapReport& report,
                                    const std::vector<std::string>& item_names) {
    std::ostringstream os;
    os << "Bootstrap replicates: " << report.B << " (" << report.n_failed << " failed)\n\n";
    os << std::left << std::setw(14) << "Item" << std::right << std::setw(14) << "se.intercept";
    for (long r = 0; r < report.se_loadings.cols(); ++r) {
        os << std::setw(14) << ("se.loading" + std::to_string(r + 1));
    }
    os << "\n";
    for (long j = 0; j < report.se_intercepts.size(); ++j) {
        os << std::left << std::setw(14) << item_label(item_names, static_cast<int>(j))
           << std::right << std::setw(14) << num(report.se_intercepts[j]);
        for (long r = 0; r < report.se_loadings.cols(); ++r) {
            os << std::setw(14) << num(report.se_loadings(j, r));
        }
        os << "\n";
    }
    os << "\nSupplementary mixture SEs\n";
    os << "  weights: [";
    for (long i = 0; i < report.se_weights.size(); ++i) {
        os << (i ? ", " : "") << num(report.se_weights[i]);
    }
    os << "]\n";
    for (std::size_t i = 0; i < report.se_means.size(); ++i) {
        os << "  mean " << (i + 1) << ": [";
        for (long r = 0; r < report.se_means[i].size(); ++r) {
            os << (r ? ", " : "") << num(report.se_means[i][r]);
        }
        os << "]\n";
    }
    return os.str();
}

}  // namespace fmab
