#pragma once

#include "teachclip/autodiff.hpp"
#include "teachclip/binary_io.hpp"
#include "teachclip/core_math.hpp"
#include "teachclip/cost_model.hpp"
#include "teachclip/errors.hpp"
#include "teachclip/experiment.hpp"
#include "teachclip/losses.hpp"
#include "teachclip/network_check.hpp"
#include "teachclip/retrieval.hpp"
#include "teachclip/student.hpp"
#include "teachclip/synth_data.hpp"
#include "teachclip/teachers.hpp"
#include "teachclip/tensor.hpp"
#include "teachclip/trainer.hpp"
