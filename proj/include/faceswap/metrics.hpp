#ifndef FACESWAP_METRICS_HPP
#define FACESWAP_METRICS_HPP

#include "faceswap/geometry.hpp"
#include "faceswap/image.hpp"
#include "faceswap/network.hpp"

#include <Eigen/Core>

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fswap {

struct EvalTriple {
    ImageF source;
    ImageF target;
    ImageF swap;
    std::optional<Landmarks> source_landmarks;
    std::optional<Landmarks> target_landmarks;
    std::optional<Landmarks> swap_landmarks;
};

struct GalleryEntry {
    std::string person_id;
    IdentityVector embedding;
};

// Percentage of probes whose nearest gallery entry (cosine similarity,
// ties to the lowest index) belongs to the probe's person.
double id_retrieval(const std::vector<IdentityVector>& probes, const std::vector<std::string>& probe_persons,
                    const std::vector<GalleryEntry>& gallery);

// Mean Euclidean distance over the union of both eye groups.
double eye_ldmk(const Landmarks& swap, const Landmarks& target);

// Image → parameter vector (shape, expression, pose…) from an external
// 3D face estimator.
class ParameterEstimator {
public:
    virtual ~ParameterEstimator() = default;
    virtual Eigen::VectorXd operator()(const ImageF& image) const = 0;
};

// Test double: one parameter, the image's mean pixel value.
class MeanPixelEstimator final : public ParameterEstimator {
public:
    Eigen::VectorXd operator()(const ImageF& image) const override;
};

// Which image of a triple the swap is compared against.
enum class MetricReference { source, target };

// mean over triples of ‖params(swap) − params(reference)‖.
// Throws EstimatorUnavailable when no estimator is given.
double external_metric(const std::vector<EvalTriple>& triples, const ParameterEstimator* estimator,
                       MetricReference reference);

struct MetricReport {
    double id_retrieval_pct = 0;
    double eye_ldmk = 0;
    std::optional<double> shape_ringnet;
    std::optional<double> exp_ringnet;
    std::optional<double> pose_ringnet;
    std::optional<double> shape_hn;
};

// Table of methods × metrics; absent cells are rendered as "—".
struct MetricTable {
    std::vector<std::string> columns;
    std::vector<std::string> methods;
    std::vector<std::map<std::string, double>> rows;

    void add(const std::string& method, std::map<std::string, double> values);
    static MetricTable from_reports(const std::vector<std::pair<std::string, MetricReport>>& reports);

    std::string to_text() const;
    std::string to_csv() const;
    static MetricTable parse_csv(std::istream& in);
};

inline constexpr const char* kMissingCell = "—";

} // namespace fswap

#endif // FACESWAP_METRICS_HPP
