#ifndef LLAB_LLAB_HPP
#define LLAB_LLAB_HPP

#include "llab/error.hpp"
#include "llab/numcore.hpp"
#include "llab/autodiff.hpp"
#include "llab/data.hpp"
#include "llab/trainer.hpp"
#include "llab/checkpoint.hpp"
#include "llab/hessian.hpp"
#include "llab/cka.hpp"
#include "llab/modeconn.hpp"
#include "llab/sweep.hpp"
#include "llab/phase.hpp"
#include "llab/config.hpp"

#endif  // LLAB_LLAB_HPP
