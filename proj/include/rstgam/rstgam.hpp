#pragma once

#include "rstgam/bpst.hpp"
#include "rstgam/errors.hpp"
#include "rstgam/glm_core.hpp"
#include "rstgam/mesh.hpp"
#include "rstgam/optim.hpp"
#include "rstgam/panel.hpp"
#include "rstgam/parallel.hpp"
#include "rstgam/pipeline.hpp"
#include "rstgam/robust.hpp"
#include "rstgam/select.hpp"
#include "rstgam/simulate.hpp"
#include "rstgam/usplines.hpp"
