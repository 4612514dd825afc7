# DelayHJB CLI Module
