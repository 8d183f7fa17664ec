#ifndef SVRECON_SVRECON_HPP
#define SVRECON_SVRECON_HPP

// Everything at once.
#include "svrecon/basis.hpp"
#include "svrecon/error.hpp"
#include "svrecon/extract.hpp"
#include "svrecon/geometry.hpp"
#include "svrecon/io.hpp"
#include "svrecon/metrics.hpp"
#include "svrecon/normals.hpp"
#include "svrecon/pipeline.hpp"
#include "svrecon/prior.hpp"
#include "svrecon/quadrature.hpp"
#include "svrecon/solver.hpp"
#include "svrecon/voxel.hpp"

#endif // SVRECON_SVRECON_HPP
