#include "covsteer/serialize.hpp"

#include "json_util.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace covsteer {

using jsonio::json;

namespace {

void check_dims(const std::vector<Vec>& vs, Index dim, const char* what) {
  for (const auto& v : vs) {
    if (v.size() != dim) throw FormatError(std::string(what) + ": inconsistent vector length");
  }
}

json from_sym_list(const std::vector<SymMat>& ms) {
  json out = json::array();
  for (const auto& m : ms) out.push_back(jsonio::from_mat(m));
  return out;
}

json from_mat_list(const std::vector<Mat>& ms) {
  json out = json::array();
  for (const auto& m : ms) out.push_back(jsonio::from_mat(m));
  return out;
}

}  // namespace

std::string to_json(const Dataset& d) {
  json j;
  j["m"] = d.m();
  j["n"] = d.n();
  j["T"] = d.horizon();
  j["seed"] = d.seed;
  j["inputs"] = jsonio::from_vecs(d.inputs);
  j["states"] = jsonio::from_vecs(d.states);
  if (d.true_noise) j["true_noise"] = jsonio::from_vecs(*d.true_noise);
  return jsonio::dump(j);
}

Dataset dataset_from_json(const std::string& text) {
  const json j = jsonio::parse(text);
  Dataset d;
  const auto m = jsonio::field(j, "m").get<Index>();
  const auto n = jsonio::field(j, "n").get<Index>();
  const auto t = jsonio::field(j, "T").get<Index>();
  d.seed = jsonio::field(j, "seed").get<std::uint64_t>();
  d.inputs = jsonio::to_vecs(jsonio::field(j, "inputs"), "inputs");
  d.states = jsonio::to_vecs(jsonio::field(j, "states"), "states");
  if (j.contains("true_noise")) d.true_noise = jsonio::to_vecs(j.at("true_noise"), "true_noise");
  if (d.horizon() != t || static_cast<Index>(d.states.size()) != t + 1) {
    throw FormatError("dataset: sample counts do not match T");
  }
  check_dims(d.inputs, m, "inputs");
  check_dims(d.states, n, "states");
  if (d.true_noise) {
    if (static_cast<Index>(d.true_noise->size()) != t) throw FormatError("dataset: true_noise length does not match T");
    check_dims(*d.true_noise, n, "true_noise");
  }
  return d;
}

std::string to_json(const NoiseEstimate& e) {
  json j;
  j["Xi_hat"] = jsonio::from_mat(e.xi_hat);
  j["Sigma_xi"] = jsonio::from_mat(e.sigma_xi);
  j["sigma_source"] = to_string(e.sigma_source);
  j["delta"] = e.delta;
  j["rho"] = e.rho;
  return jsonio::dump(j);
}

NoiseEstimate estimate_from_json(const std::string& text) {
  const json j = jsonio::parse(text);
  NoiseEstimate e;
  e.xi_hat = jsonio::to_mat(jsonio::field(j, "Xi_hat"), "Xi_hat");
  e.sigma_xi = jsonio::to_sym(jsonio::field(j, "Sigma_xi"), "Sigma_xi");
  const auto src = jsonio::field(j, "sigma_source").get<std::string>();
  if (src == "known") {
    e.sigma_source = SigmaSource::known;
  } else if (src == "estimated") {
    e.sigma_source = SigmaSource::estimated;
  } else {
    throw FormatError("sigma_source must be 'known' or 'estimated'");
  }
  e.delta = jsonio::number(jsonio::field(j, "delta"), "delta");
  e.rho = jsonio::number(jsonio::field(j, "rho"), "rho");
  if (e.xi_hat.size() > 0 && e.xi_hat.rows() != e.sigma_xi.dim()) {
    throw FormatError("estimate: Xi_hat and Sigma_xi dimensions disagree");
  }
  return e;
}

std::string to_json(const Policy& p) {
  json j;
  j["mode"] = to_string(p.mode);
  j["N"] = p.horizon();
  j["gains"] = from_mat_list(p.gains);
  j["feedforward"] = jsonio::from_vecs(p.feedforward);
  j["planned_means"] = jsonio::from_vecs(p.planned_means);
  j["planned_covs"] = from_sym_list(p.planned_covs);
  j["cost"] = {{"mean", p.cost_mean}, {"cov", p.cost_cov}};
  j["rho"] = p.rho;
  json aux = json::array();
  for (const auto& a : p.aux) {
    aux.push_back({{"S", jsonio::from_mat(a.s)},
                   {"Y", jsonio::from_mat(a.y)},
                   {"G", jsonio::from_mat(a.g)},
                   {"lambda", a.lambda},
                   {"input_cov_gap", a.input_cov_gap}});
  }
  j["aux"] = std::move(aux);
  return jsonio::dump(j);
}

Policy policy_from_json(const std::string& text) {
  const json j = jsonio::parse(text);
  Policy p;
  try {
    p.mode = parse_policy_mode(jsonio::field(j, "mode").get<std::string>());
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(e.what());
  }
  const int horizon = jsonio::field(j, "N").get<int>();
  for (const auto& g : jsonio::field(j, "gains")) p.gains.push_back(jsonio::to_mat(g, "gains"));
  p.feedforward = jsonio::to_vecs(jsonio::field(j, "feedforward"), "feedforward");
  p.planned_means = jsonio::to_vecs(jsonio::field(j, "planned_means"), "planned_means");
  for (const auto& c : jsonio::field(j, "planned_covs")) p.planned_covs.push_back(jsonio::to_sym(c, "planned_covs"));
  const json& cost = jsonio::field(j, "cost");
  p.cost_mean = jsonio::number(jsonio::field(cost, "mean"), "cost.mean");
  p.cost_cov = jsonio::number(jsonio::field(cost, "cov"), "cost.cov");
  p.rho = jsonio::number(jsonio::field(j, "rho"), "rho");
  if (j.contains("aux")) {
    for (const auto& a : j.at("aux")) {
      StepAux s;
      s.s = jsonio::to_mat(jsonio::field(a, "S"), "aux.S");
      s.y = jsonio::to_mat(jsonio::field(a, "Y"), "aux.Y");
      s.g = jsonio::to_mat(jsonio::field(a, "G"), "aux.G");
      s.lambda = jsonio::number(jsonio::field(a, "lambda"), "aux.lambda");
      s.input_cov_gap = jsonio::number(jsonio::field(a, "input_cov_gap"), "aux.input_cov_gap");
      p.aux.push_back(std::move(s));
    }
  }

  const auto n_steps = static_cast<std::size_t>(horizon);
  if (horizon < 0 || p.gains.size() != n_steps || p.feedforward.size() != n_steps ||
      p.planned_means.size() != n_steps + 1 || p.planned_covs.size() != n_steps + 1 ||
      (!p.aux.empty() && p.aux.size() != n_steps)) {
    throw FormatError("policy: list lengths do not match N");
  }
  const Index n = p.n(), m = p.m();
  check_dims(p.planned_means, n, "planned_means");
  check_dims(p.feedforward, m, "feedforward");
  for (const auto& g : p.gains) {
    if (g.rows() != m || g.cols() != n) throw FormatError("policy: gain has wrong shape");
  }
  for (const auto& c : p.planned_covs) {
    if (c.dim() != n) throw FormatError("policy: covariance has wrong shape");
  }
  return p;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw Error("write to '" + path.string() + "' failed");
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string moments_csv(const std::vector<Vec>& means, const std::vector<SymMat>& covs, int first_k) {
  if (means.size() != covs.size()) throw DimensionError("moments_csv: means and covariances differ in length");
  const Index n = means.empty() ? 0 : means.front().size();
  std::ostringstream out;
  out << std::setprecision(17) << "k";
  for (Index i = 0; i < n; ++i) out << ",mu_" << i + 1;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i; j < n; ++j) out << ",sigma_" << i + 1 << j + 1;
  }
  out << "\n";
  for (std::size_t k = 0; k < means.size(); ++k) {
    if (means[k].size() != n || covs[k].dim() != n) throw DimensionError("moments_csv: inconsistent dimensions");
    out << first_k + static_cast<int>(k);
    for (Index i = 0; i < n; ++i) out << "," << means[k](i);
    for (Index i = 0; i < n; ++i) {
      for (Index j = i; j < n; ++j) out << "," << covs[k](i, j);
    }
    out << "\n";
  }
  return out.str();
}

std::string trajectories_csv(const std::vector<std::vector<Vec>>& trajectories) {
  const Index n = trajectories.empty() || trajectories.front().empty() ? 0 : trajectories.front().front().size();
  std::ostringstream out;
  out << std::setprecision(17) << "trial,k";
  for (Index i = 0; i < n; ++i) out << ",x_" << i + 1;
  out << "\n";
  for (std::size_t t = 0; t < trajectories.size(); ++t) {
    for (std::size_t k = 0; k < trajectories[t].size(); ++k) {
      out << t << "," << k;
      for (Index i = 0; i < n; ++i) out << "," << trajectories[t][k](i);
      out << "\n";
    }
  }
  return out.str();
}

std::vector<Vec> ellipse_points(const Vec& center, const SymMat& cov, int segments) {
  if (center.size() < 2 || cov.dim() < 2) throw DimensionError("ellipse_points: need at least two coordinates");
  const SymMat c2(cov.mat().topLeftCorner(2, 2));
  const Mat root = 3.0 * sqrtm_psd(c2).mat();
  std::vector<Vec> pts;
  pts.reserve(static_cast<std::size_t>(segments) + 1);
  for (int i = 0; i <= segments; ++i) {
    const double t = 2.0 * std::numbers::pi * i / segments;
    pts.push_back(center.head(2) + root * (Vec(2) << std::cos(t), std::sin(t)).finished());
  }
  return pts;
}

namespace {

struct Box {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  void add(const Vec& p) {
    x0 = std::min(x0, p(0));
    x1 = std::max(x1, p(0));
    y0 = std::min(y0, p(1));
    y1 = std::max(y1, p(1));
  }
};

constexpr double panel_w = 480.0, panel_h = 400.0, margin = 40.0;

std::string polyline(const std::vector<Vec>& pts, const Box& b, double ox, const char* style) {
  const double sx = (panel_w - 2 * margin) / std::max(b.x1 - b.x0, 1e-12);
  const double sy = (panel_h - 2 * margin) / std::max(b.y1 - b.y0, 1e-12);
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << "<polyline " << style << " points=\"";
  for (const auto& p : pts) {
    out << ox + margin + (p(0) - b.x0) * sx << "," << panel_h - margin - (p(1) - b.y0) * sy << " ";
  }
  out << "\"/>\n";
  return out.str();
}

}  // namespace

std::string steering_svg(const std::vector<SvgPanel>& panels) {
  std::ostringstream out;
  const double width = panel_w * static_cast<double>(std::max<std::size_t>(panels.size(), 1));
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << panel_h
      << "\" viewBox=\"0 0 " << width << " " << panel_h << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const SvgPanel& panel = panels[p];
    const double ox = panel_w * static_cast<double>(p);
    std::vector<std::vector<Vec>> ellipses;
    for (std::size_t k = 0; k < panel.means.size(); ++k) ellipses.push_back(ellipse_points(panel.means[k], panel.covs[k]));
    const auto target = ellipse_points(panel.target.mean, panel.target.cov);

    Box box;
    for (const auto& e : ellipses) {
      for (const auto& v : e) box.add(v);
    }
    for (const auto& v : target) box.add(v);
    for (const auto& t : panel.trajectories) {
      for (const auto& v : t) box.add(v);
    }
    // Equal padding so the plot never degenerates to a line.
    const double pad = 0.05 * std::max({box.x1 - box.x0, box.y1 - box.y0, 1e-6});
    box.x0 -= pad, box.x1 += pad, box.y0 -= pad, box.y1 += pad;

    out << "<g>\n<rect x=\"" << ox + margin << "\" y=\"" << margin << "\" width=\"" << panel_w - 2 * margin
        << "\" height=\"" << panel_h - 2 * margin << "\" fill=\"none\" stroke=\"#888\"/>\n";
    out << "<text x=\"" << ox + panel_w / 2 << "\" y=\"" << margin / 2 + 6
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" << panel.title << "</text>\n";
    for (const auto& t : panel.trajectories) {
      std::vector<Vec> pts;
      for (const auto& v : t) pts.push_back(v.head(2));
      out << polyline(pts, box, ox, "fill=\"none\" stroke=\"#bbb\" stroke-width=\"0.7\"");
    }
    for (const auto& e : ellipses) out << polyline(e, box, ox, "fill=\"none\" stroke=\"#1f5fbf\" stroke-width=\"1.2\"");
    std::vector<Vec> path;
    for (const auto& m : panel.means) path.push_back(m.head(2));
    out << polyline(path, box, ox, "fill=\"none\" stroke=\"#1f5fbf\" stroke-dasharray=\"3,3\"");
    out << polyline(target, box, ox, "fill=\"none\" stroke=\"#c0392b\" stroke-width=\"1.6\"");
    out << "</g>\n";
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace covsteer
