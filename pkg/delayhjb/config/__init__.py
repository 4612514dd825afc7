# DelayHJB Config Module
