// Emits the two shipped scenario files. Scenarios are constructed in code and
// serialized through the canonical JSON writer so the files always match the
// loader's schema.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "fdb/scenario.hpp"

namespace {

fdb::ScalarFamily constant(double v) {
  fdb::ScalarFamily f;
  f.kind = fdb::ScalarFamily::Kind::constant;
  f.intercept = v;
  return f;
}

fdb::ScalarFamily affine1(double slope, double intercept) {
  fdb::ScalarFamily f;
  f.kind = fdb::ScalarFamily::Kind::affine;
  f.coef = fdb::Vec::Constant(1, slope);
  f.intercept = intercept;
  return f;
}

fdb::ScalarFamily tanh1(double scale, double slope, double intercept) {
  fdb::ScalarFamily f;
  f.kind = fdb::ScalarFamily::Kind::tanh_affine;
  f.scale = scale;
  f.coef = fdb::Vec::Constant(1, slope);
  f.inner_shift = 0.0;
  f.intercept = intercept;
  return f;
}

fdb::VectorMap map1(std::vector<fdb::ScalarFamily> comps) {
  fdb::VectorMap m;
  m.in_dim = 1;
  m.out_dim = static_cast<int>(comps.size());
  m.comp = std::move(comps);
  m.declared_sup = m.sup_norm_closed_form();
  m.declared_lip = m.lipschitz_closed_form();
  return m;
}

fdb::ScenarioSpec make_flat() {
  fdb::ScenarioSpec s;
  s.name = "flat";
  s.m = 1;
  s.d = 1;
  s.gamma = 1.0;
  s.rho = 0.1;
  s.dissipativity = 1.0;
  s.drift_gap = 0.0;
  s.kappa = fdb::Mat::Identity(1, 1);
  s.drifts = {map1({affine1(-1.0, 0.0)}), map1({affine1(-1.0, 0.0)})};
  s.jump_maps = {map1({constant(0.0)})};
  s.sigma_min = 1.0;

  fdb::MarketRegime r0;
  r0.alpha = map1({constant(0.2)});
  r0.sigma = map1({constant(1.0)});
  r0.beta = {map1({constant(0.0)})};
  fdb::MarketRegime r1;
  r1.alpha = map1({constant(0.1)});
  r1.sigma = map1({constant(1.0)});
  s.regimes = {r0, r1};

  s.mark_labels = {"loss"};
  s.loss_weights = {fdb::Vec::Constant(1, 1.0)};
  s.default_density.family = "poisson-renewal";
  s.default_density.rates = fdb::Vec::Constant(1, 1.0);

  fdb::ConstraintSet box;
  box.kind = fdb::ConstraintSet::Kind::box;
  box.radius = 1.0;
  s.constraints = {box, box};

  s.grid.d = 1;
  s.grid.half_width = 6.0;
  s.grid.cells = 512;
  s.reference_points = {fdb::Vec::Zero(1), fdb::Vec::Zero(1)};
  s.initial_factor = fdb::Vec::Zero(1);
  return s;
}

fdb::ScenarioSpec make_curved() {
  fdb::ScenarioSpec s;
  s.name = "curved";
  s.m = 1;
  s.d = 1;
  s.gamma = 1.0;
  s.rho = 0.1;
  s.dissipativity = 4.0;
  s.drift_gap = 0.0;
  s.kappa = fdb::Mat::Identity(1, 1);
  s.drifts = {map1({affine1(-4.0, 0.0)}), map1({affine1(-4.0, 0.0)})};
  s.jump_maps = {map1({constant(0.2)})};
  s.sigma_min = 1.0;

  fdb::MarketRegime r0;
  r0.alpha = map1({tanh1(0.2, 1.0, 0.1)});
  r0.sigma = map1({constant(1.0)});
  r0.beta = {map1({constant(0.05)})};
  fdb::MarketRegime r1;
  r1.alpha = map1({tanh1(0.2, 1.0, 0.1)});
  r1.sigma = map1({constant(1.0)});
  s.regimes = {r0, r1};

  s.mark_labels = {"loss"};
  s.loss_weights = {fdb::Vec::Constant(1, 1.0)};
  s.default_density.family = "poisson-renewal";
  s.default_density.rates = fdb::Vec::Constant(1, 1.0);

  fdb::ConstraintSet box;
  box.kind = fdb::ConstraintSet::Kind::box;
  box.radius = 2.0;
  s.constraints = {box, box};

  s.grid.d = 1;
  s.grid.half_width = 6.0;
  s.grid.cells = 512;
  s.reference_points = {fdb::Vec::Zero(1), fdb::Vec::Zero(1)};
  s.initial_factor = fdb::Vec::Zero(1);
  return s;
}

void write_one(const fdb::ScenarioSpec& s, const std::string& dir) {
  std::string path = dir + "/" + s.name + ".json";
  std::ofstream out(path);
  if (!out) throw fdb::IoError("cannot open " + path);
  out << fdb::scenario_to_json(s).dump(2) << "\n";
  if (!out) throw fdb::IoError("write failure on " + path);
  std::cout << "wrote " << path << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  std::string dir = argc > 1 ? argv[1] : "scenarios";
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    std::cerr << "cannot create directory " << dir << "\n";
    return 2;
  }
  try {
    write_one(make_flat(), dir);
    write_one(make_curved(), dir);
  } catch (const fdb::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code);
  }
  return 0;
}
