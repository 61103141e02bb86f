#include "faceswap/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <istream>
#include <limits>
#include <sstream>

namespace fswap {

double id_retrieval(const std::vector<IdentityVector>& probes, const std::vector<std::string>& probe_persons,
                    const std::vector<GalleryEntry>& gallery) {
    if (gallery.empty()) throw EmptyGallery("identity retrieval needs a gallery");
    if (probes.size() != probe_persons.size()) throw InvalidArgument("one person id per probe expected");
    if (probes.empty()) throw InvalidArgument("identity retrieval needs at least one probe");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < probes.size(); ++i) {
        const auto& probe = probes[i].values;
        std::size_t best = 0;
        double best_sim = -std::numeric_limits<double>::infinity();
        bool covered = false;
        for (std::size_t g = 0; g < gallery.size(); ++g) {
            const auto& ref = gallery[g].embedding.values;
            if (ref.size() != probe.size()) throw ShapeMismatch("gallery embedding dimension differs");
            const double sim = probe.dot(ref) / (probe.norm() * ref.norm());
            if (sim > best_sim) {
                best_sim = sim;
                best = g;
            }
            covered = covered || gallery[g].person_id == probe_persons[i];
        }
        if (!covered) throw InvalidArgument("gallery lacks person '" + probe_persons[i] + "'");
        if (gallery[best].person_id == probe_persons[i]) ++correct;
    }
    return 100.0 * double(correct) / double(probes.size());
}

double eye_ldmk(const Landmarks& swap, const Landmarks& target) {
    if (swap.size() != target.size() || swap.index_groups != target.index_groups)
        throw IndexMismatch("landmark sets differ in layout");
    double total = 0;
    int count = 0;
    for (const char* name : {groups::kLeftEye, groups::kRightEye}) {
        const auto it = swap.index_groups.find(name);
        if (it == swap.index_groups.end()) throw IndexMismatch(std::string("missing group ") + name);
        for (int i = it->second.begin; i < it->second.end; ++i) {
            total += (swap.points[std::size_t(i)] - target.points[std::size_t(i)]).norm();
            ++count;
        }
    }
    if (count == 0) throw IndexMismatch("eye groups are empty");
    return total / count;
}

Eigen::VectorXd MeanPixelEstimator::operator()(const ImageF& image) const {
    double sum = 0;
    for (int c = 0; c < image.channels(); ++c) sum += image.plane(c).template cast<double>().sum();
    Eigen::VectorXd v(1);
    v(0) = sum / (double(image.rows()) * image.cols() * image.channels());
    return v;
}

double external_metric(const std::vector<EvalTriple>& triples, const ParameterEstimator* estimator,
                       MetricReference reference) {
    if (estimator == nullptr) throw EstimatorUnavailable("no parameter estimator configured");
    if (triples.empty()) throw InvalidArgument("no evaluation triples");
    double total = 0;
    for (const auto& t : triples) {
        const ImageF& ref = reference == MetricReference::source ? t.source : t.target;
        total += ((*estimator)(t.swap) - (*estimator)(ref)).norm();
    }
    return total / double(triples.size());
}

namespace {

const std::vector<std::pair<std::string, std::string>>& column_titles() {
    static const std::vector<std::pair<std::string, std::string>> titles = {
        {"id_retrieval", "Identity retrieval"}, {"shape_ringnet", "Shape_ringnet"}, {"exp_ringnet", "Exp_ringnet"},
        {"pose_ringnet", "Pose_ringnet"},       {"shape_hn", "Shape_HN"},           {"eye_ldmk", "Eye_ldmk"},
    };
    return titles;
}

std::string title_of(const std::string& column) {
    for (const auto& [key, title] : column_titles())
        if (key == column) return title;
    return column;
}

std::string format_value(double v) {
    std::ostringstream s;
    s << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
    return s.str();
}

// Display width in code points; the missing-cell marker is multi-byte.
std::size_t display_width(const std::string& s) {
    std::size_t n = 0;
    for (unsigned char ch : s)
        if ((ch & 0xC0) != 0x80) ++n;
    return n;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) {
        const auto b = cell.find_first_not_of(" \t\r");
        const auto e = cell.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
    }
    return out;
}

} // namespace

void MetricTable::add(const std::string& method, std::map<std::string, double> values) {
    for (const auto& [key, v] : values)
        if (std::find(columns.begin(), columns.end(), key) == columns.end()) columns.push_back(key);
    methods.push_back(method);
    rows.push_back(std::move(values));
}

MetricTable MetricTable::from_reports(const std::vector<std::pair<std::string, MetricReport>>& reports) {
    MetricTable table;
    bool shape = false, exp = false, pose = false, hn = false;
    for (const auto& [name, r] : reports) {
        shape |= r.shape_ringnet.has_value();
        exp |= r.exp_ringnet.has_value();
        pose |= r.pose_ringnet.has_value();
        hn |= r.shape_hn.has_value();
    }
    // Column order follows the conventional table layout.
    table.columns = {"id_retrieval"};
    if (shape) table.columns.push_back("shape_ringnet");
    if (exp) table.columns.push_back("exp_ringnet");
    if (pose) table.columns.push_back("pose_ringnet");
    if (hn) table.columns.push_back("shape_hn");
    table.columns.push_back("eye_ldmk");
    for (const auto& [name, r] : reports) {
        std::map<std::string, double> values{{"id_retrieval", r.id_retrieval_pct}, {"eye_ldmk", r.eye_ldmk}};
        if (r.shape_ringnet) values["shape_ringnet"] = *r.shape_ringnet;
        if (r.exp_ringnet) values["exp_ringnet"] = *r.exp_ringnet;
        if (r.pose_ringnet) values["pose_ringnet"] = *r.pose_ringnet;
        if (r.shape_hn) values["shape_hn"] = *r.shape_hn;
        table.methods.push_back(name);
        table.rows.push_back(std::move(values));
    }
    return table;
}

std::string MetricTable::to_text() const {
    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> header{"Method"};
    for (const auto& c : columns) header.push_back(title_of(c));
    cells.push_back(header);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::vector<std::string> line{methods[r]};
        for (const auto& c : columns) {
            auto it = rows[r].find(c);
            if (it == rows[r].end()) {
                line.emplace_back(kMissingCell);
            } else {
                std::ostringstream s;
                s << std::fixed << std::setprecision(3) << it->second;
                line.push_back(s.str());
            }
        }
        cells.push_back(std::move(line));
    }
    std::vector<std::size_t> widths(header.size(), 0);
    for (const auto& line : cells)
        for (std::size_t i = 0; i < line.size(); ++i) widths[i] = std::max(widths[i], display_width(line[i]));
    std::ostringstream out;
    auto rule = [&] {
        out << '+';
        for (auto w : widths) out << std::string(w + 2, '-') << '+';
        out << '\n';
    };
    rule();
    for (std::size_t l = 0; l < cells.size(); ++l) {
        out << '|';
        for (std::size_t i = 0; i < cells[l].size(); ++i)
            out << ' ' << cells[l][i] << std::string(widths[i] - display_width(cells[l][i]), ' ') << " |";
        out << '\n';
        if (l == 0) rule();
    }
    rule();
    return out.str();
}

std::string MetricTable::to_csv() const {
    std::ostringstream out;
    out << "method";
    for (const auto& c : columns) out << ',' << c;
    out << '\n';
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out << methods[r];
        for (const auto& c : columns) {
            auto it = rows[r].find(c);
            out << ',' << (it == rows[r].end() ? std::string(kMissingCell) : format_value(it->second));
        }
        out << '\n';
    }
    return out.str();
}

MetricTable MetricTable::parse_csv(std::istream& in) {
    MetricTable table;
    std::string line;
    if (!std::getline(in, line)) throw IoFailure("metric table is empty");
    auto header = split_csv(line);
    if (header.empty() || header[0] != "method") throw IoFailure("metric table header must start with 'method'");
    table.columns.assign(header.begin() + 1, header.end());
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = split_csv(line);
        if (cells.size() != header.size()) throw IoFailure("metric row has " + std::to_string(cells.size()) + " cells");
        std::map<std::string, double> values;
        for (std::size_t i = 1; i < cells.size(); ++i) {
            if (cells[i] == kMissingCell) continue;
            try {
                values[table.columns[i - 1]] = std::stod(cells[i]);
            } catch (const std::exception&) {
                throw IoFailure("bad metric value '" + cells[i] + "'");
            }
        }
        table.methods.push_back(cells[0]);
        table.rows.push_back(std::move(values));
    }
    return table;
}

} // namespace fswap
