#pragma once

#include "npi/adam.hpp"
#include "npi/binary_io.hpp"
#include "npi/config.hpp"
#include "npi/checkpoint.hpp"
#include "npi/control.hpp"
#include "npi/corpus.hpp"
#include "npi/datagen.hpp"
#include "npi/digest.hpp"
#include "npi/embedding.hpp"
#include "npi/errors.hpp"
#include "npi/eval.hpp"
#include "npi/generate.hpp"
#include "npi/gradcheck.hpp"
#include "npi/gradcheck_suite.hpp"
#include "npi/lm.hpp"
#include "npi/lm_train.hpp"
#include "npi/losses.hpp"
#include "npi/metrics.hpp"
#include "npi/nets.hpp"
#include "npi/ops.hpp"
#include "npi/rng.hpp"
#include "npi/tensor.hpp"
#include "npi/training.hpp"
#include "npi/vocab.hpp"
