#include "forcelens/mpm.h"

#include <cmath>
#include <cstdlib>
#include <sstream>

#include "forcelens/errors.h"
#include "forcelens/parallel.h"

namespace forcelens {

int env_thread_count() {
  const char* env = std::getenv("FORCELENS_THREADS");
  if (!env || !*env) return 0;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  return (end && *end == '\0' && n > 0 && n < 4096) ? static_cast<int>(n) : 0;
}

namespace {

constexpr int kOffsets = 27;

std::string fmt_vec(const Vec3& v) {
  std::ostringstream s;
  s << "(" << v.x() << ", " << v.y() << ", " << v.z() << ")";
  return s.str();
}

Eigen::Vector3i offset_of(int o) { return {o / 9, (o / 3) % 3, o % 3}; }

// Quadratic B-spline weights, grid node bookkeeping and both transfers. Node
// sums visit their contributing (particle, offset) entries in ascending
// particle order, so results do not depend on the thread count.
struct Transfer {
  std::vector<Eigen::Vector3i> base;
  std::vector<Vec3> fx;
  std::vector<std::array<Vec3, 3>> w, dw;  // [offset along axis](axis)
  std::vector<std::array<int, kOffsets>> node_of;

  std::vector<int> dense_index;
  std::vector<Eigen::Vector3i> nodes;
  std::vector<int> node_start, node_entries;  // entries are p * 27 + o
  std::vector<double> mass;
  std::vector<Vec3> momentum, vraw, vel, mask;

  double weight(std::size_t p, int o) const {
    const Eigen::Vector3i d = offset_of(o);
    return w[p][d.x()].x() * w[p][d.y()].y() * w[p][d.z()].z();
  }

  Vec3 dpos(std::size_t p, int o, double h) const {
    return (offset_of(o).cast<double>() - fx[p]) * h;
  }

  // d W / d x for one entry.
  Vec3 weight_gradient(std::size_t p, int o, double inv_h) const {
    const Eigen::Vector3i d = offset_of(o);
    const double wx = w[p][d.x()].x(), wy = w[p][d.y()].y(), wz = w[p][d.z()].z();
    return inv_h * Vec3(dw[p][d.x()].x() * wy * wz, wx * dw[p][d.y()].y() * wz,
                        wx * wy * dw[p][d.z()].z());
  }

  void compute_weights(const GridSpec& grid, std::span<const ParticleDyn> dyn) {
    const std::size_t n = dyn.size();
    base.resize(n);
    fx.resize(n);
    w.resize(n);
    dw.resize(n);
    const double inv_h = 1.0 / grid.cell_size;
    for (std::size_t p = 0; p < n; ++p) {
      const Vec3 X = (dyn[p].x - grid.origin) * inv_h;
      for (int a = 0; a < 3; ++a) {
        const double b = std::floor(X(a) - 0.5);
        const double f = X(a) - b;
        const int bi = static_cast<int>(b);
        if (!(b >= 0.0) || bi + 2 > grid.dims(a) - 1) {
          throw SimulationError("particle " + std::to_string(p) + " at " + fmt_vec(dyn[p].x) +
                                " left the grid");
        }
        base[p](a) = bi;
        fx[p](a) = f;
        w[p][0](a) = 0.5 * (1.5 - f) * (1.5 - f);
        w[p][1](a) = 0.75 - (f - 1.0) * (f - 1.0);
        w[p][2](a) = 0.5 * (f - 0.5) * (f - 0.5);
        dw[p][0](a) = f - 1.5;
        dw[p][1](a) = -2.0 * (f - 1.0);
        dw[p][2](a) = f - 0.5;
      }
    }
  }

  void build_nodes(const GridSpec& grid) {
    const std::size_t n = base.size();
    const auto total = static_cast<std::size_t>(grid.dims.x()) * grid.dims.y() * grid.dims.z();
    if (dense_index.size() != total) dense_index.assign(total, -1);
    node_of.resize(n);
    nodes.clear();
    std::vector<int> count;
    for (std::size_t p = 0; p < n; ++p) {
      for (int o = 0; o < kOffsets; ++o) {
        const Eigen::Vector3i idx = base[p] + offset_of(o);
        const std::size_t key =
            (static_cast<std::size_t>(idx.x()) * grid.dims.y() + idx.y()) * grid.dims.z() +
            idx.z();
        int& slot = dense_index[key];
        if (slot < 0) {
          slot = static_cast<int>(nodes.size());
          nodes.push_back(idx);
          count.push_back(0);
        }
        node_of[p][o] = slot;
        ++count[slot];
      }
    }
    node_start.assign(nodes.size() + 1, 0);
    for (std::size_t i = 0; i < nodes.size(); ++i) node_start[i + 1] = node_start[i] + count[i];
    node_entries.resize(static_cast<std::size_t>(node_start.back()));
    std::vector<int> fill(node_start.begin(), node_start.end() - 1);
    for (std::size_t p = 0; p < n; ++p) {
      for (int o = 0; o < kOffsets; ++o) {
        node_entries[fill[node_of[p][o]]++] = static_cast<int>(p * kOffsets + o);
      }
    }
    for (const auto& idx : nodes) {
      const std::size_t key =
          (static_cast<std::size_t>(idx.x()) * grid.dims.y() + idx.y()) * grid.dims.z() + idx.z();
      dense_index[key] = -1;
    }
    mass.assign(nodes.size(), 0.0);
    momentum.assign(nodes.size(), Vec3::Zero());
    vraw.assign(nodes.size(), Vec3::Zero());
    vel.assign(nodes.size(), Vec3::Zero());
    mask.assign(nodes.size(), Vec3::Zero());
  }

  // m_n = sum W m_p, mv_n = sum W (m_p vhat_p + A_p dpos).
  void scatter(std::span<const double> m, std::span<const Vec3> vhat, std::span<const Mat3> A,
               double h) {
    parallel_for_each(nodes.size(), [&](std::size_t n) {
      double mn = 0.0;
      Vec3 mv = Vec3::Zero();
      for (int e = node_start[n]; e < node_start[n + 1]; ++e) {
        const auto p = static_cast<std::size_t>(node_entries[e] / kOffsets);
        const int o = node_entries[e] % kOffsets;
        const double W = weight(p, o);
        mn += W * m[p];
        Vec3 q = m[p] * vhat[p];
        if (!A.empty()) q += A[p] * dpos(p, o, h);
        mv += W * q;
      }
      mass[n] = mn;
      momentum[n] = mv;
    });
  }

  void gather(std::span<ParticleDyn> dyn, double h) const {
    const double c = 4.0 / (h * h);
    parallel_for_each(dyn.size(), [&](std::size_t p) {
      Vec3 v = Vec3::Zero();
      Mat3 C = Mat3::Zero();
      for (int o = 0; o < kOffsets; ++o) {
        const double W = weight(p, o);
        const Vec3& vn = vel[node_of[p][o]];
        v += W * vn;
        C += (c * W) * vn * dpos(p, o, h).transpose();
      }
      dyn[p].v = v;
      dyn[p].affine = C;
    });
  }
};

}  // namespace

// ---------------------------------------------------------------------------

Vec3 GridBuffers::total_momentum() const {
  Vec3 s = Vec3::Zero();
  for (const auto& m : momentum) s += m;
  return s;
}

double GridBuffers::total_mass() const {
  double s = 0.0;
  for (double m : mass) s += m;
  return s;
}

GridBuffers particle_to_grid(const Scene& scene, std::span<const ParticleDyn> dyn,
                             std::span<const Mat3> kirchhoff, double dt) {
  if (dyn.size() != scene.particles.size()) throw ShapeError("particle_to_grid: count mismatch");
  const double h = scene.grid.cell_size;
  Transfer tr;
  tr.compute_weights(scene.grid, dyn);
  tr.build_nodes(scene.grid);
  std::vector<double> m(dyn.size());
  std::vector<Vec3> v(dyn.size());
  std::vector<Mat3> A(dyn.size());
  for (std::size_t p = 0; p < dyn.size(); ++p) {
    const Particle& sp = scene.particles[p];
    m[p] = sp.mass;
    v[p] = dyn[p].v;
    A[p] = sp.mass * dyn[p].affine;
    if (!kirchhoff.empty()) A[p] -= dt * sp.volume0 * (4.0 / (h * h)) * kirchhoff[p];
  }
  tr.scatter(m, v, A, h);
  GridBuffers out;
  out.nodes = tr.nodes;
  out.mass = tr.mass;
  out.momentum = tr.momentum;
  out.velocity.assign(tr.nodes.size(), Vec3::Zero());
  return out;
}

void grid_velocity_from_momentum(GridBuffers& grid) {
  grid.velocity.resize(grid.mass.size());
  for (std::size_t n = 0; n < grid.mass.size(); ++n) {
    grid.velocity[n] = grid.mass[n] > kMassEpsilon ? Vec3(grid.momentum[n] / grid.mass[n])
                                                   : Vec3::Zero();
  }
}

void grid_to_particle(const Scene& scene, const GridBuffers& grid, std::span<ParticleDyn> dyn) {
  Transfer tr;
  tr.compute_weights(scene.grid, dyn);
  tr.build_nodes(scene.grid);
  if (tr.nodes != grid.nodes) throw ShapeError("grid_to_particle: grid does not match particles");
  tr.vel = grid.velocity;
  tr.gather(dyn, scene.grid.cell_size);
}

// ---------------------------------------------------------------------------

struct Substepper::Impl {
  Scene scene;
  StepOptions options;
  double dt = 0.0, h = 0.0, inv_h = 0.0, c = 0.0;
  std::vector<LameParams> lame;

  std::vector<double> mass, volume, scale;
  std::vector<char> constrained;

  Transfer tr;
  std::vector<Vec3> positions, field_out, vhat;
  std::vector<Mat3> Fh, Fp, tau, A;
  std::vector<char> plastic;

  // adjoint scratch
  std::vector<Vec3> gv_out, gvn, gmv, gvhat, gx, gfield, field_gx;
  std::vector<Mat3> gC_out, gA;
  std::vector<double> gm;

  Impl(const Scene& s, StepOptions opts) : scene(s), options(std::move(opts)) {
    dt = scene.substep_dt();
    h = scene.grid.cell_size;
    inv_h = 1.0 / h;
    c = 4.0 / (h * h);
    for (const auto& m : scene.materials) lame.push_back(lame_params(m.youngs_modulus, m.poisson_ratio));
    const std::size_t n = scene.particles.size();
    if (!options.force_scale.empty() && options.force_scale.size() != n) {
      throw ShapeError("force_scale must have one entry per particle");
    }
    mass.resize(n);
    volume.resize(n);
    scale.assign(n, 1.0);
    constrained.resize(n);
    for (std::size_t p = 0; p < n; ++p) {
      const Particle& sp = scene.particles[p];
      mass[p] = sp.mass;
      volume[p] = sp.volume0;
      constrained[p] = sp.constrained;
      if (!options.force_scale.empty()) scale[p] = options.force_scale[p];
    }
  }

  std::string where(int frame, int substep) const {
    return " (frame " + std::to_string(frame) + ", substep " + std::to_string(substep) + ")";
  }

  // Everything up to and including P2G and the grid update.
  void prepare(const std::vector<ParticleDyn>& dyn, const ForceField& field, double t, int frame,
               int substep) {
    const std::size_t n = dyn.size();
    if (n != mass.size()) throw ShapeError("substep: particle count does not match the scene");
    Fh.resize(n);
    Fp.resize(n);
    tau.resize(n);
    A.resize(n);
    plastic.resize(n);
    positions.resize(n);
    field_out.resize(n);
    vhat.resize(n);

    parallel_for_each(n, [&](std::size_t p) {
      const MaterialParams& mat = scene.materials[scene.particles[p].material_id];
      try {
        Fh[p] = update_deformation_gradient(dyn[p].deformation, dyn[p].affine, dt);
      } catch (const DegenerateDeformationError& e) {
        throw DegenerateDeformationError(std::string(e.what()) + " at particle " +
                                         std::to_string(p) + where(frame, substep));
      }
      bool active = false;
      Fp[p] = plastic_projection(Fh[p], mat, dt, &active);
      plastic[p] = active;
      tau[p] = corotated_kirchhoff(Fp[p], lame[scene.particles[p].material_id]);
      positions[p] = dyn[p].x;
    });

    field.query_batch(positions, t, frame, field_out);
    for (std::size_t p = 0; p < n; ++p) {
      if (constrained[p]) {
        vhat[p] = dyn[p].v;
        continue;
      }
      const Vec3 a = scale[p] * field_out[p];
      if (!a.allFinite()) {
        throw SimulationError("non-finite external force at particle " + std::to_string(p) +
                              ", x = " + fmt_vec(dyn[p].x) + where(frame, substep));
      }
      vhat[p] = dyn[p].v + dt * a;
    }
    for (std::size_t p = 0; p < n; ++p) {
      A[p] = -dt * volume[p] * c * tau[p] + mass[p] * dyn[p].affine;
    }

    try {
      tr.compute_weights(scene.grid, dyn);
    } catch (const SimulationError& e) {
      throw SimulationError(e.what() + where(frame, substep));
    }
    tr.build_nodes(scene.grid);
    tr.scatter(mass, vhat, A, h);
    grid_update();
  }

  void grid_update() {
    const GridSpec& g = scene.grid;
    parallel_for_each(tr.nodes.size(), [&](std::size_t n) {
      if (!(tr.mass[n] > kMassEpsilon)) {
        tr.vraw[n].setZero();
        tr.vel[n].setZero();
        tr.mask[n].setZero();
        return;
      }
      tr.vraw[n] = tr.momentum[n] / tr.mass[n];
      Vec3 v = tr.vraw[n] + dt * scene.gravity;
      Vec3 mask = Vec3::Ones();
      const Vec3 pos = g.origin + h * tr.nodes[n].cast<double>();
      for (const auto& bc : scene.bcs) {
        if (const auto* gp = std::get_if<GroundPlane>(&bc)) {
          if (pos.y() > gp->height) continue;
          if (gp->mode == GroundMode::kSticky) {
            mask.setZero();
          } else if (mask.y() * v.y() < 0.0) {
            mask.y() = 0.0;
          }
        } else if (const auto* fr = std::get_if<FixedRegion>(&bc)) {
          if (fr->contains(pos)) mask.setZero();
        }
      }
      tr.mask[n] = mask;
      tr.vel[n] = mask.cwiseProduct(v);
    });
  }

  void forward(std::vector<ParticleDyn>& dyn, const ForceField& field, double t, int frame,
               int substep) {
    prepare(dyn, field, t, frame, substep);
    const std::size_t n = dyn.size();
    std::vector<ParticleDyn> out(dyn);
    tr.gather(out, h);
    for (std::size_t p = 0; p < n; ++p) {
      if (constrained[p]) out[p].v.setZero();
      if (out[p].v.norm() * dt > h) {
        throw CflError("CFL violation: particle " + std::to_string(p) + " speed " +
                       std::to_string(out[p].v.norm()) + " m/s crosses more than one cell" +
                       where(frame, substep));
      }
      out[p].x = dyn[p].x + dt * out[p].v;
      out[p].deformation = Fp[p];
    }
    dyn = std::move(out);
  }

  void backward(const std::vector<ParticleDyn>& dyn, const ForceField& field, double t,
                int frame, int substep, Adjoint& adj, std::span<double> grad_params,
                const BackwardOptions& opts) {
    prepare(dyn, field, t, frame, substep);
    const std::size_t n = dyn.size();
    const std::size_t nodes = tr.nodes.size();

    // Advection and re-pinning: x' = x + dt v'.
    gv_out.resize(n);
    gC_out = adj.affine;
    for (std::size_t p = 0; p < n; ++p) {
      gv_out[p] = constrained[p] ? Vec3::Zero() : Vec3(adj.v[p] + dt * adj.x[p]);
    }

    // G2P onto nodes, then grid update and normalization.
    gvn.assign(nodes, Vec3::Zero());
    gmv.assign(nodes, Vec3::Zero());
    gm.assign(nodes, 0.0);
    parallel_for_each(nodes, [&](std::size_t nd) {
      Vec3 g = Vec3::Zero();
      for (int e = tr.node_start[nd]; e < tr.node_start[nd + 1]; ++e) {
        const auto p = static_cast<std::size_t>(tr.node_entries[e] / kOffsets);
        const int o = tr.node_entries[e] % kOffsets;
        const double W = tr.weight(p, o);
        g += W * gv_out[p] + (c * W) * (gC_out[p] * tr.dpos(p, o, h));
      }
      gvn[nd] = g;
      if (tr.mass[nd] > kMassEpsilon) {
        const Vec3 graw = tr.mask[nd].cwiseProduct(g);
        gmv[nd] = graw / tr.mass[nd];
        gm[nd] = -graw.dot(tr.vraw[nd]) / tr.mass[nd];
      }
    });

    // Back through P2G, weights, stress and the deformation update.
    gvhat.resize(n);
    gx.resize(n);
    gA.resize(n);
    std::vector<Mat3> gF(n), gCin(n);
    parallel_for_each(n, [&](std::size_t p) {
      const Mat3& Ap = A[p];
      Vec3 gxp = Vec3::Zero();
      Vec3 gvh = Vec3::Zero();
      Mat3 gAp = Mat3::Zero();
      for (int o = 0; o < kOffsets; ++o) {
        const int nd = tr.node_of[p][o];
        const double W = tr.weight(p, o);
        const Vec3 dp = tr.dpos(p, o, h);
        const Vec3& vn = tr.vel[nd];
        const Vec3 q = mass[p] * vhat[p] + Ap * dp;
        const double gW = vn.dot(gv_out[p]) + c * vn.dot(gC_out[p] * dp) + gm[nd] * mass[p] +
                          gmv[nd].dot(q);
        const Vec3 gdpos = (c * W) * (gC_out[p].transpose() * vn) + W * (Ap.transpose() * gmv[nd]);
        gvh += (W * mass[p]) * gmv[nd];
        gAp += W * gmv[nd] * dp.transpose();
        gxp += gW * tr.weight_gradient(p, o, inv_h) - gdpos;
      }
      gvhat[p] = gvh;
      gA[p] = gAp;
      gx[p] = gxp;

      // A = -dt V c tau + m C.
      Mat3 gC = mass[p] * gAp;
      const Mat3 gtau = (-dt * volume[p] * c) * gAp;
      const LameParams& lm = lame[scene.particles[p].material_id];
      const Polar polar = polar_decompose(Fp[p]);
      Mat3 gFp = adj.deformation[p];
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          Mat3 E = Mat3::Zero();
          E(i, j) = 1.0;
          gFp(i, j) += gtau.cwiseProduct(corotated_kirchhoff_derivative(Fp[p], polar, lm, E)).sum();
        }
      }
      Mat3 gFh = gFp;
      if (plastic[p]) {
        const MaterialParams& mat = scene.materials[scene.particles[p].material_id];
        const double eps = 1e-6 * std::max(1.0, Fh[p].cwiseAbs().maxCoeff());
        for (int i = 0; i < 3; ++i) {
          for (int j = 0; j < 3; ++j) {
            Mat3 Fplus = Fh[p], Fminus = Fh[p];
            Fplus(i, j) += eps;
            Fminus(i, j) -= eps;
            const Mat3 d = (plastic_projection(Fplus, mat, dt) - plastic_projection(Fminus, mat, dt)) /
                           (2.0 * eps);
            gFh(i, j) = gFp.cwiseProduct(d).sum();
          }
        }
      }
      // Fh = (I + dt C) F.
      const Mat3& F = dyn[p].deformation;
      gC += dt * gFh * F.transpose();
      gF[p] = (Mat3::Identity() + dt * dyn[p].affine).transpose() * gFh;
      gCin[p] = gC;
    });

    // External force: vhat = v + dt s f(x).
    gfield.resize(n);
    field_gx.assign(n, Vec3::Zero());
    bool any = false;
    for (std::size_t p = 0; p < n; ++p) {
      gfield[p] = constrained[p] ? Vec3::Zero() : Vec3((dt * scale[p]) * gvhat[p]);
      if (opts.flip_force_sign) gfield[p] = -gfield[p];
      any = any || !gfield[p].isZero(0.0);
    }
    if (any && !grad_params.empty()) {
      field.backward_batch(positions, t, frame, gfield, grad_params, field_gx);
    }

    for (std::size_t p = 0; p < n; ++p) {
      adj.x[p] = adj.x[p] + gx[p] + field_gx[p];
      adj.v[p] = gvhat[p];
      adj.affine[p] = gCin[p];
      adj.deformation[p] = gF[p];
    }
  }
};

Substepper::Substepper(const Scene& scene, StepOptions options)
    : impl_(std::make_unique<Impl>(scene, std::move(options))) {}
Substepper::~Substepper() = default;
Substepper::Substepper(Substepper&&) noexcept = default;
Substepper& Substepper::operator=(Substepper&&) noexcept = default;

void Substepper::forward(std::vector<ParticleDyn>& dyn, const ForceField& field, double t,
                         int frame, int substep) {
  impl_->forward(dyn, field, t, frame, substep);
}

void Substepper::backward(const std::vector<ParticleDyn>& dyn, const ForceField& field, double t,
                          int frame, int substep, Adjoint& adj, std::span<double> grad_params,
                          const BackwardOptions& options) {
  if (adj.x.size() != dyn.size()) throw ShapeError("adjoint size does not match the particles");
  impl_->backward(dyn, field, t, frame, substep, adj, grad_params, options);
}

const Scene& Substepper::scene() const { return impl_->scene; }
double Substepper::dt() const { return impl_->dt; }

void Substepper::Adjoint::resize(std::size_t n) {
  x.resize(n);
  v.resize(n);
  affine.resize(n);
  deformation.resize(n);
  set_zero();
}

void Substepper::Adjoint::set_zero() {
  for (auto& a : x) a.setZero();
  for (auto& a : v) a.setZero();
  for (auto& a : affine) a.setZero();
  for (auto& a : deformation) a.setZero();
}

double Substepper::Adjoint::norm() const {
  double s = 0.0;
  for (const auto& a : x) s += a.squaredNorm();
  for (const auto& a : v) s += a.squaredNorm();
  for (const auto& a : affine) s += a.squaredNorm();
  for (const auto& a : deformation) s += a.squaredNorm();
  return std::sqrt(s);
}

void Substepper::Adjoint::scale(double s) {
  for (auto& a : x) a *= s;
  for (auto& a : v) a *= s;
  for (auto& a : affine) a *= s;
  for (auto& a : deformation) a *= s;
}

bool Substepper::Adjoint::all_finite() const {
  for (const auto& a : x) if (!a.allFinite()) return false;
  for (const auto& a : v) if (!a.allFinite()) return false;
  for (const auto& a : affine) if (!a.allFinite()) return false;
  for (const auto& a : deformation) if (!a.allFinite()) return false;
  return true;
}

// ---------------------------------------------------------------------------

SimState initial_state(const Scene& scene) {
  SimState s;
  s.particles = scene.particles;
  return s;
}

std::vector<ParticleDyn> dynamics_of(const SimState& state) {
  std::vector<ParticleDyn> dyn(state.particles.size());
  for (std::size_t p = 0; p < dyn.size(); ++p) {
    const Particle& sp = state.particles[p];
    dyn[p] = {sp.x, sp.v, sp.affine, sp.deformation};
  }
  return dyn;
}

void commit_dynamics(SimState& state, const std::vector<ParticleDyn>& dyn) {
  for (std::size_t p = 0; p < dyn.size(); ++p) {
    Particle& sp = state.particles[p];
    sp.x = dyn[p].x;
    sp.v = dyn[p].v;
    sp.affine = dyn[p].affine;
    sp.deformation = dyn[p].deformation;
    const Mat3 cov = sp.deformation * sp.covariance0 * sp.deformation.transpose();
    sp.covariance = 0.5 * (cov + cov.transpose());
  }
}

TrajectoryFrame snapshot(const SimState& state) {
  TrajectoryFrame f;
  f.frame = state.frame;
  for (const auto& p : state.particles) {
    f.positions.push_back(p.x);
    f.velocities.push_back(p.v);
  }
  return f;
}

void apply_external_force(SimState& state, const ForceField& field, double substep_dt,
                          const StepOptions& options) {
  const std::size_t n = state.particles.size();
  if (!options.force_scale.empty() && options.force_scale.size() != n) {
    throw ShapeError("force_scale must have one entry per particle");
  }
  std::vector<Vec3> x(n), a(n);
  for (std::size_t p = 0; p < n; ++p) x[p] = state.particles[p].x;
  field.query_batch(x, state.t, state.frame, a);
  for (std::size_t p = 0; p < n; ++p) {
    Particle& sp = state.particles[p];
    if (sp.constrained) continue;
    const double s = options.force_scale.empty() ? 1.0 : options.force_scale[p];
    const Vec3 acc = s * a[p];
    if (!acc.allFinite()) {
      throw SimulationError("non-finite external force at particle " + std::to_string(p) +
                            ", x = " + fmt_vec(sp.x));
    }
    sp.v += substep_dt * acc;
  }
}

SimState step_frame(const SimState& state, const ForceField& field, const Scene& scene,
                    const StepOptions& options) {
  Substepper stepper(scene, options);
  std::vector<ParticleDyn> dyn = dynamics_of(state);
  const int S = scene.substeps_per_frame;
  for (int s = 0; s < S; ++s) {
    stepper.forward(dyn, field, state.t + s * stepper.dt(), state.frame, state.frame * S + s);
  }
  SimState next = state;
  commit_dynamics(next, dyn);
  next.frame = state.frame + 1;
  next.t = next.frame * scene.frame_dt;
  return next;
}

Trajectory rollout(const SimState& state, const ForceField& field, const Scene& scene,
                   int frames, const StepOptions& options) {
  Trajectory traj{snapshot(state)};
  SimState s = state;
  for (int f = 0; f < frames; ++f) {
    s = step_frame(s, field, scene, options);
    traj.push_back(snapshot(s));
  }
  return traj;
}

}  // namespace forcelens
